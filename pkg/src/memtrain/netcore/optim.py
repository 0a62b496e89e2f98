"""AdamW returning deltas, and plateau-based learning-rate halving."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import ShapeError


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam. :meth:`step` proposes deltas; it never touches the weights.

    ``decay`` names the parameters that receive weight decay (default: all).
    """

    lr: float = 0.004
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    decay: set | None = None
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        deltas = {}
        for name, g in grads.items():
            if name not in params:
                continue
            w = params[name]
            g = np.asarray(g, dtype=w.dtype)
            if g.shape != w.shape:
                raise ShapeError(f"{name}: gradient {g.shape} != parameter {w.shape}")
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            step = (m / c1) / (np.sqrt(v / c2) + self.eps)
            lam = self.weight_decay if (self.decay is None or name in self.decay) else 0.0
            if lam:
                step = step + lam * w
            deltas[name] = (-self.lr * step).astype(w.dtype, copy=False)
        return deltas

    def state_arrays(self) -> dict:
        out = {f"opt.m.{k}": v for k, v in self.m.items()}
        out.update({f"opt.v.{k}": v for k, v in self.v.items()})
        out["opt.t"] = np.array([self.t], dtype=np.float32)
        out["opt.lr"] = np.array([self.lr], dtype=np.float32)
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.m = {k[6:]: v.copy() for k, v in arrays.items() if k.startswith("opt.m.")}
        self.v = {k[6:]: v.copy() for k, v in arrays.items() if k.startswith("opt.v.")}
        self.t = int(arrays["opt.t"][0])
        self.lr = float(arrays["opt.lr"][0])


@dataclass
class PlateauScheduler:
    """Multiply the rate by ``factor`` after ``patience`` epochs without a new best."""

    lr: float
    patience: int = 5
    factor: float = 0.5
    best: float = -np.inf
    bad_epochs: int = 0

    def step(self, accuracy: float) -> float:
        if accuracy > self.best:
            self.best = accuracy
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


def lr_on_plateau(history, lr0: float, patience: int = 5, factor: float = 0.5) -> float:
    """Learning rate after replaying an accuracy history."""
    history = list(history)
    if not history:
        raise ValueError("history must not be empty")
    sched = PlateauScheduler(lr=lr0, patience=patience, factor=factor)
    for acc in history:
        sched.step(acc)
    return sched.lr
