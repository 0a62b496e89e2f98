"""Accuracy after transferring trained weights to a fresh chip with programming error."""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..harness.data import Dataset
from ..netcore import fake_quantize
from ..rng import stream
from ..trainer import MixedPrecisionState, calibrate_ranges, deploy, evaluate


def inject_transfer_noise(W, sigma: float, clip: float, n_levels: int, rng: np.random.Generator) -> np.ndarray:
    """Add ``Normal(0, sigma * step)`` with ``step = 2*clip/(n_levels-1)`` and clip to ``±clip``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    W = np.asarray(W)
    if sigma == 0:
        return W.copy()
    step = 2.0 * clip / (n_levels - 1)
    noisy = W + rng.normal(0.0, sigma * step, size=W.shape)
    return np.clip(noisy, -clip, clip).astype(W.dtype, copy=False)


@dataclass
class TransferModel:
    label: str
    kind: str  # "mixed", "software" or "qat"
    state: MixedPrecisionState


@dataclass
class TransferProtocol:
    sigma_prog_levels: list = field(default_factory=lambda: [0.5])
    noise_samples_per_model: int = 10
    n_levels: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.noise_samples_per_model < 1:
            raise ValueError("noise_samples_per_model must be >= 1")
        if any(s < 0 for s in self.sigma_prog_levels):
            raise ValueError("sigma values must be >= 0")


@dataclass(frozen=True)
class TransferRecord:
    model: str
    kind: str
    sigma: float
    sample: int
    accuracy: float
    baseline: float

    @property
    def drop(self) -> float:
        return self.baseline - self.accuracy

    @property
    def normalized(self) -> float:
        return self.accuracy / self.baseline if self.baseline else 0.0


def _deployable(m: TransferModel) -> tuple[dict, dict]:
    """Weights the model computes with, and the clip of each layer's mapping."""
    st = m.state
    names = st.weight_names()
    if m.kind == "mixed":
        # the chip computed with its programmed devices, not with the digital residuals
        weights = {n: st.mappings[n].read_weights().astype(np.float32) for n in names}
        clips = {n: st.mappings[n].weight_clip for n in names}
        return weights, clips
    weights = {}
    for n in names:
        w = st.params[n + ".weight"]
        if m.kind == "qat":
            w = fake_quantize(w, st.config.qat_levels, float(np.abs(w).max()))
        weights[n] = w
    clips = {n: max(float(np.abs(w).max()), 1e-6) for n, w in weights.items()}
    return weights, clips


def baseline_accuracy(m: TransferModel, test: Dataset, seed: int = 0) -> float:
    """Accuracy of the model as trained: on its own chip for mixed runs, digitally otherwise."""
    if m.kind == "mixed":
        return evaluate(m.state, test, "cim", stream(seed, "transfer-baseline")).accuracy
    return evaluate(m.state, test, "reference").accuracy


def _target_state(m: TransferModel, calib: Dataset | None) -> MixedPrecisionState:
    st = copy.copy(m.state)
    st.params = {k: v.copy() for k, v in m.state.params.items()}
    st.buffers = {k: v.copy() for k, v in m.state.buffers.items()}
    st.mappings, st.delta, st.theta, st.update_counts, st.tile_ids = {}, {}, {}, {}, {}
    st.act_range = dict(m.state.act_range)
    if m.kind != "mixed":
        st.config = copy.copy(m.state.config)
        st.config.mode = "mixed"  # evaluated on crossbars from here on
        if calib is not None:
            calibrate_ranges(st, calib.floats())
    return st


def run_trial(m: TransferModel, test: Dataset, sigma: float, sample: int, model_idx: int,
              protocol: TransferProtocol, calib: Dataset | None = None) -> float:
    weights, clips = _deployable(m)
    rng = stream(protocol.seed, "transfer", model_idx, int(round(sigma * 1000)), sample)
    noisy = {n: inject_transfer_noise(w, sigma, clips[n], protocol.n_levels, rng) for n, w in weights.items()}
    st = _target_state(m, calib)
    deploy(st, noisy, None, clips)
    return evaluate(st, test, "cim", rng).accuracy


def transfer_eval(protocol: TransferProtocol, models: list[TransferModel], test: Dataset,
                  calib: Dataset | None = None, workers: int = 1) -> list[TransferRecord]:
    """One record per (model, sigma, noise sample)."""
    baselines = [baseline_accuracy(m, test, protocol.seed) for m in models]
    jobs = [(mi, s, k) for mi in range(len(models)) for s in protocol.sigma_prog_levels
            for k in range(protocol.noise_samples_per_model)]

    def one(job):
        mi, s, k = job
        return run_trial(models[mi], test, s, k, mi, protocol, calib)

    if workers > 1:
        from joblib import Parallel, delayed
        accs = Parallel(n_jobs=workers)(delayed(one)(j) for j in jobs)
    else:
        accs = [one(j) for j in jobs]
    return [TransferRecord(models[mi].label, models[mi].kind, s, k, acc, baselines[mi])
            for (mi, s, k), acc in zip(jobs, accs)]


def five_numbers(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return {"min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4], "count": int(v.size)}


def summarize(records: list[TransferRecord]) -> list[dict]:
    groups: dict[tuple, list[TransferRecord]] = {}
    for r in records:
        groups.setdefault((r.kind, r.sigma), []).append(r)
    out = []
    for (kind, sigma), rs in sorted(groups.items()):
        out.append({
            "kind": kind,
            "sigma": sigma,
            "accuracy": five_numbers([r.accuracy for r in rs]),
            "normalized_accuracy": five_numbers([r.normalized for r in rs]),
            "drop": five_numbers([r.drop for r in rs]),
        })
    return out


def write_outputs(records: list[TransferRecord], out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw = out / "transfer_trials.csv"
    with open(raw, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "kind", "sigma", "sample", "accuracy", "baseline", "normalized", "drop"])
        for r in records:
            w.writerow([r.model, r.kind, r.sigma, r.sample, r.accuracy, r.baseline, r.normalized, r.drop])
    summary = out / "transfer_summary.json"
    summary.write_text(json.dumps({"groups": summarize(records)}, indent=2, sort_keys=True) + "\n")
    return raw, summary
