"""Statistical model of a single bulk-switching RRAM cell.

Conductance (µS) is the canonical state; currents (µA) are derived through
the read voltage. Read noise and programming error are expressed in units of
the level separation, i.e. the current gap between two adjacent programmable
levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DeviceError(ValueError):
    pass


class TargetOutOfRange(DeviceError):
    pass


class RangeError(DeviceError):
    pass


@dataclass(frozen=True)
class DeviceConfig:
    """Device statistics.

    Currents are in µA at ``v_read`` volts. ``sigma_read``, ``sigma_prog`` and
    ``verify_tol`` are in units of :func:`level_separation`.
    """

    i_min: float = 1.0
    i_max: float = 7.0
    v_read: float = 0.1
    n_levels: int = 16
    sigma_read: float = 0.3
    sigma_prog: float = 0.5
    verify_tol: float = 0.5
    max_trials: int = 2

    def __post_init__(self):
        if not self.i_min > 0:
            raise DeviceError(f"i_min must be positive, got {self.i_min}")
        if not self.i_max > self.i_min:
            raise DeviceError(f"i_max ({self.i_max}) must exceed i_min ({self.i_min})")
        if self.v_read <= 0:
            raise DeviceError("v_read must be positive")
        if self.n_levels < 2:
            raise DeviceError("n_levels must be >= 2")
        if min(self.sigma_read, self.sigma_prog, self.verify_tol) < 0:
            raise DeviceError("noise parameters and verify_tol must be >= 0")
        if self.max_trials < 1:
            raise DeviceError("max_trials must be >= 1")

    @property
    def g_min(self) -> float:
        return self.i_min / self.v_read

    @property
    def g_max(self) -> float:
        return self.i_max / self.v_read

    @property
    def on_off_ratio(self) -> float:
        return self.i_max / self.i_min

    @property
    def prog_std_g(self) -> float:
        """Programming error std in µS."""
        return self.sigma_prog * level_separation(self) / self.v_read

    @property
    def verify_window_g(self) -> float:
        """Verify acceptance half-window in µS."""
        return self.verify_tol * level_separation(self) / self.v_read


@dataclass
class DeviceState:
    g: float
    last_target: float | None = None


@dataclass(frozen=True)
class ProgramResult:
    final_g: float
    trials_used: int
    verified: bool


def level_separation(cfg: DeviceConfig) -> float:
    """Current gap (µA) between adjacent programmable levels."""
    return (cfg.i_max - cfg.i_min) / (cfg.n_levels - 1)


def read_current(dev: DeviceState, cfg: DeviceConfig, rng: np.random.Generator) -> float:
    i = dev.g * cfg.v_read
    if cfg.sigma_read > 0:
        i += rng.normal(0.0, cfg.sigma_read * level_separation(cfg))
    return max(i, 0.0)


def read_currents(g: np.ndarray, cfg: DeviceConfig, rng: np.random.Generator | None) -> np.ndarray:
    """Vectorised :func:`read_current`; ``rng=None`` reads noiselessly."""
    i = np.asarray(g, dtype=np.float64) * cfg.v_read
    if rng is not None and cfg.sigma_read > 0:
        i = i + rng.normal(0.0, cfg.sigma_read * level_separation(cfg), size=i.shape)
    return np.maximum(i, 0.0)


def program_array(g: np.ndarray, targets: np.ndarray, cfg: DeviceConfig,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Write-and-verify many devices at once.

    Each device gets up to ``max_trials`` Gaussian placements around its
    target. The verify readback is noiseless. Devices that never land inside
    the window keep their last attempt.

    Returns ``(final_g, trials_used, verified)``; ``g`` is not modified.
    """
    targets = np.asarray(targets, dtype=np.float64)
    lo, hi = cfg.g_min, cfg.g_max
    tol_g = 1e-9 * max(abs(hi), 1.0)
    if targets.size and (targets.min() < lo - tol_g or targets.max() > hi + tol_g):
        raise TargetOutOfRange(
            f"targets must lie in [{lo}, {hi}] µS, got [{targets.min()}, {targets.max()}]")
    final = np.array(g, dtype=np.float64, copy=True)
    trials = np.zeros(targets.shape, dtype=np.int64)
    verified = np.zeros(targets.shape, dtype=bool)
    std = cfg.prog_std_g
    window = cfg.verify_window_g
    # physical bound on where a placement can land
    g_floor, g_ceil = 0.5 * lo, 1.5 * hi
    pending = np.ones(targets.shape, dtype=bool)
    for _ in range(cfg.max_trials):
        idx = np.flatnonzero(pending)
        if idx.size == 0:
            break
        t = targets.flat[idx]
        placed = t + rng.normal(0.0, std, size=idx.size) if std > 0 else t.copy()
        placed = np.clip(placed, g_floor, g_ceil)
        final.flat[idx] = placed
        trials.flat[idx] += 1
        ok = np.abs(placed - t) <= window
        verified.flat[idx[ok]] = True
        pending.flat[idx[ok]] = False
    return final, trials, verified


def program(dev: DeviceState, target_g: float, cfg: DeviceConfig,
            rng: np.random.Generator) -> ProgramResult:
    final, trials, verified = program_array(np.array([dev.g]), np.array([target_g]), cfg, rng)
    dev.g = float(final[0])
    dev.last_target = float(target_g)
    return ProgramResult(final_g=dev.g, trials_used=int(trials[0]), verified=bool(verified[0]))


def init_conductances(cfg: DeviceConfig, init_lo: float, init_hi: float,
                      rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform initial conductances (µS) between two read currents (µA)."""
    lo, hi = init_lo / cfg.v_read, init_hi / cfg.v_read
    eps = 1e-9 * cfg.g_max
    if lo < cfg.g_min - eps or hi > cfg.g_max + eps or lo > hi:
        raise RangeError(
            f"init window [{init_lo}, {init_hi}] µA must lie inside "
            f"[{cfg.i_min}, {cfg.i_max}] µA with lo <= hi")
    if lo == hi:
        return np.full(size if size is not None else (), lo, dtype=np.float64)
    return rng.uniform(lo, hi, size=size)


def init_device(cfg: DeviceConfig, init_lo: float, init_hi: float,
                rng: np.random.Generator) -> DeviceState:
    return DeviceState(g=float(init_conductances(cfg, init_lo, init_hi, rng)))
