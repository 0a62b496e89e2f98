"""Mixed-precision training: crossbar forward, digital backward, thresholded programming.

The digital unit keeps a float copy ``W_FP`` of every crossbar layer and an
accumulator ``dW_FP`` of optimizer proposals. A device pair is reprogrammed
only once its accumulated change reaches ``theta`` (one conductance level in
weight units); ``W_FP`` then takes the intended value and the accumulator
entry is cleared.

Modes: ``mixed`` (the scheme above), ``naive`` (every batch programs its own
level-quantized step, leftovers are dropped), ``software`` (plain float
training) and ``qat`` (float training with fake-quantized weights).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .crossbar import TileConfig
from .device import DeviceConfig, init_conductances
from .harness.data import DataError, Dataset
from .mapping import (LayerMapping, MapConfig, cim_linear_forward, plan_tiling, program_weights,
                      weights_to_pairs)
from .netcore import (INPUT, AdamW, Context, ModelSpec, PlateauScheduler, backward_ref,
                      cross_entropy, fake_quantize, forward_ref, init_buffers, init_params,
                      load_tensors, save_tensors)
from .rng import Streams

MODES = ("mixed", "naive", "software", "qat")
CIM_MODES = ("mixed", "naive")


class StateError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "mixed"
    batch_size: int = 64
    batches_per_epoch: int = 400
    max_epochs: int = 25
    lr: float = 0.004
    weight_decay: float = 0.01
    scheduler: bool = False
    patience: int = 5
    factor: float = 0.5
    # device-read initialisation window (µA); "software" maps Kaiming weights instead
    init: str = "device"
    init_lo: float = 0.82
    init_hi: float = 2.0
    # 0 picks a clip whose device-read init matches the Kaiming weight spread
    weight_clip: float = 0.0
    act_momentum: float = 0.1
    train_gain: bool = True
    gain_lr: float = 0.0004
    cim_noise: bool = True
    program_noise: bool = True
    stop_on_zero_updates: bool = True
    qat_levels: int = 16
    test_subset: int | None = 2560
    eval_batch: int = 500

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.init not in ("device", "software"):
            raise ValueError("init must be 'device' or 'software'")
        if self.batch_size < 1 or self.batches_per_epoch < 1:
            raise ValueError("batch_size and batches_per_epoch must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_accuracy: float
    updates: int
    program_attempts: int
    verified_fraction: float
    lr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray


def threshold_for(cfg: DeviceConfig, mapcfg: MapConfig) -> float:
    """One conductance level expressed in weight units."""
    if cfg.n_levels < 2:
        raise ValueError("n_levels must be >= 2")
    return 2.0 * mapcfg.weight_clip / (cfg.n_levels - 1)


def matched_clip(fan_in: int, device: DeviceConfig, init_lo: float, init_hi: float) -> float:
    """Weight clip that makes uniform device-read weights as spread as Kaiming-uniform ones.

    A pair drawn uniformly from ``[lo, hi]`` has difference std ``(hi-lo)/sqrt(6)``;
    Kaiming-uniform has std ``sqrt(2/fan_in)``.
    """
    span = (device.i_max - device.i_min) / (init_hi - init_lo)
    return float(np.sqrt(12.0 / fan_in) * span)


@dataclass
class MixedPrecisionState:
    model: ModelSpec
    config: TrainConfig
    device: DeviceConfig
    tile: TileConfig
    streams: Streams
    params: dict
    buffers: dict
    opt: AdamW
    gain_opt: AdamW
    mappings: dict = field(default_factory=dict)
    delta: dict = field(default_factory=dict)
    theta: dict = field(default_factory=dict)
    act_range: dict = field(default_factory=dict)
    update_counts: dict = field(default_factory=dict)
    tile_ids: dict = field(default_factory=dict)
    epoch: int = 0
    history: list = field(default_factory=list)
    scheduler: PlateauScheduler | None = None
    batch_updates: int = 0
    batch_attempts: int = 0
    batch_programmed: int = 0
    batch_verified: int = 0

    @property
    def uses_cim(self) -> bool:
        return self.config.mode in CIM_MODES

    def weight_names(self) -> list[str]:
        return [l.name for l in self.model.weighted_layers()]

    def total_updates(self) -> int:
        return int(sum(c.sum() for c in self.update_counts.values()))

    def n_weights(self) -> int:
        return self.model.n_weights()


def _tile_ids(m: LayerMapping) -> np.ndarray:
    ids = np.empty(m.layer_dims, dtype=np.int64)
    for rg, (r0, r1) in enumerate(m.row_groups):
        for cg, (c0, c1) in enumerate(m.col_groups):
            ids[r0:r1, c0:c1] = m.tile_index(rg, cg)
    return ids


def _kernel_area(layer) -> int:
    return getattr(layer, "kernel", 1) ** 2


def attach_mappings(state: MixedPrecisionState, clips: dict[str, float]) -> None:
    """Create (unprogrammed) crossbar mappings for every weighted layer."""
    for layer in state.model.weighted_layers():
        name = layer.name
        fan_in, fan_out = state.params[name + ".weight"].shape
        mc = MapConfig.for_device(state.device, state.tile, clips[name])
        m = plan_tiling(fan_in, fan_out, mc, kernel_area=_kernel_area(layer), tile=state.tile,
                        device=state.device)
        state.mappings[name] = m
        state.tile_ids[name] = _tile_ids(m)
        state.theta[name] = threshold_for(state.device, mc)
        state.delta[name] = np.zeros((fan_in, fan_out), dtype=np.float32)
        state.update_counts[name] = np.zeros((fan_in, fan_out), dtype=np.int64)
        state.params.setdefault(name + ".gain", np.ones(m.n_tiles, dtype=np.float32))


def build_state(model: ModelSpec, config: TrainConfig, device: DeviceConfig, tile: TileConfig,
                seed: int = 0) -> MixedPrecisionState:
    streams = Streams(seed)
    params = init_params(model, streams["init"])
    weight_names = {l.name + ".weight" for l in model.weighted_layers()}
    state = MixedPrecisionState(
        model=model, config=config, device=device, tile=tile, streams=streams, params=params,
        buffers=init_buffers(model),
        opt=AdamW(lr=config.lr, weight_decay=config.weight_decay, decay=weight_names),
        gain_opt=AdamW(lr=config.gain_lr, weight_decay=0.0),
        scheduler=PlateauScheduler(config.lr, config.patience, config.factor) if config.scheduler else None)
    if not state.uses_cim:
        return state
    clips = {}
    for layer in model.weighted_layers():
        w = params[layer.name + ".weight"]
        if config.weight_clip > 0:
            clips[layer.name] = config.weight_clip
        elif config.init == "device":
            clips[layer.name] = matched_clip(w.shape[0], device, config.init_lo, config.init_hi)
        else:
            clips[layer.name] = float(np.abs(w).max())
    attach_mappings(state, clips)
    init_rng = streams["init"]
    prog = streams["program"] if config.program_noise else None
    for name, m in state.mappings.items():
        key = name + ".weight"
        if config.init == "device":
            # devices start at random conductances; the digital copy is their noiseless readout
            m.g_pos[...] = init_conductances(device, config.init_lo, config.init_hi, init_rng, m.layer_dims)
            m.g_neg[...] = init_conductances(device, config.init_lo, config.init_hi, init_rng, m.layer_dims)
            state.params[key] = m.read_weights().astype(np.float32)
        else:
            w = np.clip(state.params[key], -m.weight_clip, m.weight_clip)
            program_weights(m, w, prog)
            state.params[key] = w.astype(np.float32)
    return state


def _is_first(model: ModelSpec, layer) -> bool:
    return model.sources(model.layers.index(layer)) == (INPUT,)


def quantize_inputs(x2d: np.ndarray, a_max: float, levels: int = 255):
    """Unsigned DAC codes and the activation values they stand for."""
    step = a_max / levels
    codes = np.clip(np.floor(x2d.astype(np.float64) * (levels / a_max) + 0.5), 0, levels)
    return codes.astype(np.int64), (codes * step).astype(x2d.dtype)


def _cim_context(state: MixedPrecisionState, training: bool, rng_read, rng_adc) -> Context:
    noisy = state.config.cim_noise and rng_read is not None
    levels = state.tile.max_input

    def linear(layer, x2d, w):
        name = layer.name
        if _is_first(state.model, layer):
            a_max = 1.0
        else:
            bmax = float(x2d.max()) if x2d.size else 0.0
            a_max = state.act_range.get(name)
            if training:
                mom = state.config.act_momentum
                a_max = bmax if a_max is None else (1 - mom) * a_max + mom * bmax
                state.act_range[name] = a_max
            elif a_max is None:
                a_max = bmax
            a_max = max(a_max, 1e-6)
        codes, used = quantize_inputs(x2d, a_max, levels)
        m = state.mappings[name]
        m.alpha = m.alpha_init * state.params[name + ".gain"].astype(np.float64)
        z = cim_linear_forward(m, codes, "noisy" if noisy else "ideal", rng_read, adc_rng=rng_adc)
        return z * (a_max / levels), used

    weights = {}
    for name in state.mappings:
        gain = state.params[name + ".gain"]
        weights[name] = state.params[name + ".weight"] * gain[state.tile_ids[name]]
    return Context(training=training, buffers=state.buffers, linear=linear, weights=weights)


def _qat_context(state: MixedPrecisionState, training: bool) -> Context:
    n = state.config.qat_levels

    def fq(name, w):
        clip = float(np.abs(w).max())
        return fake_quantize(w, n, clip) if clip > 0 else w

    return Context(training=training, buffers=state.buffers, fake_quant=fq)


def _forward(state: MixedPrecisionState, x, training: bool, cim: bool, rng_read=None, rng_adc=None):
    if cim:
        if not state.mappings:
            raise StateError("crossbar forward requested but no layer mappings exist")
        ctx = _cim_context(state, training, rng_read, rng_adc)
    elif state.config.mode == "qat":
        ctx = _qat_context(state, training)
    else:
        ctx = Context(training=training, buffers=state.buffers)
    return forward_ref(state.model, state.params, x, ctx)


def train_batch(state: MixedPrecisionState, x, y, rng=None) -> float:
    """Forward, backward and optimizer proposal for one batch; devices are not touched.

    In crossbar modes the weight proposals go to ``delta``; every other
    parameter (biases, batch-norm, tile gains) is updated directly.
    """
    cim = state.uses_cim
    if cim and not state.mappings:
        raise StateError("mixed-precision training needs programmed layer mappings")
    noisy = state.config.cim_noise
    rng_read = (rng if rng is not None else state.streams["read"]) if noisy else None
    rng_adc = state.streams["adc"] if noisy else None
    logits, cache = _forward(state, x, True, cim, rng_read, rng_adc)
    loss, dl = cross_entropy(logits, y)
    grads = backward_ref(state.model, state.params, cache, dl, input_grad=False)
    gain_grads = {}
    if cim:
        for name, m in state.mappings.items():
            G = grads[name + ".weight"]
            gain = state.params[name + ".gain"]
            ids = state.tile_ids[name]
            w = state.params[name + ".weight"]
            gain_grads[name + ".gain"] = np.bincount(
                ids.ravel(), weights=(G * w).ravel().astype(np.float64), minlength=m.n_tiles).astype(np.float32)
            grads[name + ".weight"] = G * gain[ids]
    weight_keys = {n + ".weight" for n in state.mappings}
    main = {k: v for k, v in grads.items() if k in state.params and not k.endswith(".gain")}
    deltas = state.opt.step(state.params, main)
    for k, d in deltas.items():
        if k in weight_keys:
            state.delta[k[: -len(".weight")]] += d
        else:
            state.params[k] += d
    if cim and state.config.train_gain:
        for k, d in state.gain_opt.step(state.params, gain_grads).items():
            state.params[k] = np.maximum(state.params[k] + d, np.float32(1e-3))
    return loss


def apply_threshold_updates(state: MixedPrecisionState, rng=None) -> int:
    """Program every weight whose accumulated change reached ``theta``; returns the count."""
    if not state.uses_cim:
        return 0
    prog = (rng if rng is not None else state.streams["program"]) if state.config.program_noise else None
    naive = state.config.mode == "naive"
    total = 0
    for name, m in state.mappings.items():
        d = state.delta[name]
        th = np.float32(state.theta[name])
        if naive:
            step = np.round(d / th) * th
            mask = step != 0
        else:
            step = d
            mask = np.abs(d) >= th
        if naive:
            d[...] = 0
        if not mask.any():
            continue
        key = name + ".weight"
        w = state.params[key]
        clip = np.float32(m.weight_clip)
        target = w.copy()
        target[mask] = np.clip(w[mask] + step[mask], -clip, clip)
        trials, verified = program_weights(m, target, prog, mask)
        w[mask] = target[mask]
        d[mask] = 0
        state.update_counts[name][mask] += 1
        n = int(mask.sum())
        total += n
        state.batch_attempts += int(trials.sum())
        state.batch_programmed += n
        state.batch_verified += int(verified.sum())
    state.batch_updates += total
    return total


def predict_logits(state: MixedPrecisionState, images: np.ndarray, mode: str = "cim", rng=None,
                   batch: int | None = None) -> np.ndarray:
    """Logits for float images (``N x C x H x W`` in [0, 1])."""
    if mode not in ("cim", "reference"):
        raise ValueError("mode must be 'cim' or 'reference'")
    cim = mode == "cim"
    noisy = cim and state.config.cim_noise
    if noisy and rng is None:
        rng = state.streams.fresh("eval", state.epoch)
    bs = batch or state.config.eval_batch
    out = []
    for s in range(0, len(images), bs):
        logits, _ = _forward(state, images[s : s + bs], False, cim, rng if noisy else None,
                             rng if noisy else None)
        out.append(np.asarray(logits).reshape(-1, state.model.num_classes))
    return np.concatenate(out) if out else np.zeros((0, state.model.num_classes), np.float32)


def evaluate(state: MixedPrecisionState, dataset: Dataset, mode: str = "cim", rng=None) -> EvalResult:
    """Accuracy and confusion matrix (rows: true label, cols: prediction)."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if mode not in ("cim", "reference"):
        raise ValueError("mode must be 'cim' or 'reference'")
    if mode == "cim" and state.config.cim_noise and rng is None:
        rng = state.streams.fresh("eval", state.epoch)
    classes = state.model.num_classes
    conf = np.zeros((classes, classes), dtype=np.int64)
    bs = state.config.eval_batch
    for s in range(0, len(dataset), bs):
        idx = slice(s, s + bs)
        pred = predict_logits(state, dataset.floats(idx), mode, rng, bs).argmax(axis=1)
        np.add.at(conf, (dataset.labels[idx], pred), 1)
    return EvalResult(accuracy=float(np.trace(conf) / conf.sum()), confusion=conf)


def default_eval_mode(state: MixedPrecisionState) -> str:
    return "cim" if state.uses_cim else "reference"


def train_epoch(state: MixedPrecisionState, train: Dataset) -> tuple[float, int]:
    cfg = state.config
    n_batches = min(cfg.batches_per_epoch, len(train) // cfg.batch_size)
    if n_batches < 1:
        raise DataError(f"training set of {len(train)} images is smaller than one batch")
    order = state.streams["shuffle"].permutation(len(train))
    losses = []
    for b in range(n_batches):
        idx = np.sort(order[b * cfg.batch_size : (b + 1) * cfg.batch_size])
        losses.append(train_batch(state, train.floats(idx), train.labels[idx]))
        apply_threshold_updates(state)
    return float(np.mean(losses)), n_batches


def _set_lr(state: MixedPrecisionState, lr: float) -> None:
    ratio = state.config.gain_lr / state.config.lr
    state.opt.lr = lr
    state.gain_opt.lr = lr * ratio


def run_training(state: MixedPrecisionState, train: Dataset, test: Dataset, out_dir=None,
                 max_epochs: int | None = None, on_epoch=None) -> list[EpochStats]:
    """Train until ``max_epochs`` or, in mixed mode, an epoch without device updates.

    ``on_epoch(state, stats)`` runs after every epoch; a truthy return stops training.

    With ``out_dir`` each epoch appends one JSON line to ``epochs.jsonl`` and a
    ``summary.csv`` is written at the end.
    """
    cfg = state.config
    limit = cfg.max_epochs if max_epochs is None else max_epochs
    if len(train) == 0 or len(test) == 0:
        raise DataError("training and test sets must be non-empty")
    test_eval = test.subset(cfg.test_subset)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if state.epoch == 0:
            (out / "epochs.jsonl").write_text("")
    stats = []
    while state.epoch < limit:
        state.batch_updates = state.batch_attempts = state.batch_programmed = state.batch_verified = 0
        loss, _ = train_epoch(state, train)
        state.epoch += 1
        acc = evaluate(state, test_eval, default_eval_mode(state)).accuracy
        if state.scheduler is not None:
            _set_lr(state, state.scheduler.step(acc))
        st = EpochStats(
            epoch=state.epoch, train_loss=loss, test_accuracy=acc, updates=state.batch_updates,
            program_attempts=state.batch_attempts,
            verified_fraction=(state.batch_verified / state.batch_programmed) if state.batch_programmed else 1.0,
            lr=state.opt.lr)
        stats.append(st)
        state.history.append(asdict(st))
        if out is not None:
            with open(out / "epochs.jsonl", "a") as fh:
                fh.write(st.to_json() + "\n")
        if on_epoch is not None and on_epoch(state, st):
            break
        if cfg.mode == "mixed" and cfg.stop_on_zero_updates and st.updates == 0:
            break
    if out is not None:
        write_summary_csv(out / "summary.csv", [EpochStats(**h) for h in state.history])
    return stats


def write_summary_csv(path, stats: list[EpochStats]) -> None:
    names = [f.name for f in fields(EpochStats)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for s in stats:
            w.writerow([getattr(s, n) for n in names])


def sparsity(state: MixedPrecisionState, batches: int) -> dict:
    """Update counts against the dense alternative of programming every weight every batch."""
    n = state.n_weights()
    updates = state.total_updates()
    dense = batches * n
    return {
        "weights": n,
        "batches": batches,
        "updates": updates,
        "dense_updates": dense,
        "reduction": (dense / updates) if updates else None,  # no updates: unbounded
        "mean_updates_per_weight": updates / n,
    }


def calibrate_ranges(state: MixedPrecisionState, x) -> None:
    """Set activation ranges from the float forward of a calibration batch."""
    ctx = Context(training=False, buffers=state.buffers)
    values = {INPUT: np.asarray(x, dtype=np.float32)}
    model = state.model
    for i, layer in enumerate(model.layers):
        ins = [values[s] for s in model.sources(i)]
        if layer.weighted and not _is_first(model, layer):
            state.act_range[layer.name] = max(float(ins[0].max()), 1e-6)
        if layer.__class__.__name__ == "Add":
            values[layer.name], _ = layer.forward(*ins)
        else:
            values[layer.name], _ = layer.forward(ins[0], state.params, ctx)


def deploy(state: MixedPrecisionState, weights: dict | None = None, rng=None,
           clips: dict | None = None) -> None:
    """Map float weights onto fresh crossbars (exactly when ``rng`` is None).

    ``clips`` defaults to each layer's largest weight magnitude.
    """
    weights = weights or {l.name: state.params[l.name + ".weight"] for l in state.model.weighted_layers()}
    if clips is None:
        clips = {n: max(float(np.abs(w).max()), 1e-6) for n, w in weights.items()}
    state.mappings.clear()
    # trained tile gains carry over; layers without one start at 1
    attach_mappings(state, clips)
    for name, m in state.mappings.items():
        program_weights(m, np.clip(weights[name], -m.weight_clip, m.weight_clip), rng)


def save_checkpoint(state: MixedPrecisionState, path) -> None:
    """Tensors in the netcore binary format plus a JSON sidecar with counters and RNG states."""
    path = Path(path)
    tensors = {f"param.{k}": v for k, v in state.params.items()}
    tensors.update({f"buffer.{k}": v for k, v in state.buffers.items()})
    for name, m in state.mappings.items():
        tensors[f"delta.{name}"] = state.delta[name]
        tensors[f"gpos.{name}"] = m.g_pos
        tensors[f"gneg.{name}"] = m.g_neg
        tensors[f"count.{name}"] = state.update_counts[name]
    tensors.update({f"adam.{k}": v for k, v in state.opt.state_arrays().items()})
    tensors.update({f"gainadam.{k}": v for k, v in state.gain_opt.state_arrays().items()})
    save_tensors(path, tensors)
    meta = {
        "epoch": state.epoch,
        "history": state.history,
        "act_range": state.act_range,
        "clips": {n: m.weight_clip for n, m in state.mappings.items()},
        "scheduler": asdict(state.scheduler) if state.scheduler else None,
        "streams": state.streams.get_state(),
        "config": asdict(state.config),
        "model": state.model.name,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_checkpoint(state: MixedPrecisionState, path) -> MixedPrecisionState:
    """Restore a state built with the same model/config (see :func:`build_state`)."""
    path = Path(path)
    tensors = load_tensors(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    for k, v in tensors.items():
        kind, _, name = k.partition(".")
        if kind == "param":
            state.params[name] = v.copy()
        elif kind == "buffer":
            state.buffers[name] = v.copy()
    if meta["clips"]:
        state.mappings.clear()
        attach_mappings(state, meta["clips"])
        for name, m in state.mappings.items():
            state.delta[name] = tensors[f"delta.{name}"].copy()
            m.g_pos[...] = tensors[f"gpos.{name}"]
            m.g_neg[...] = tensors[f"gneg.{name}"]
            state.update_counts[name] = tensors[f"count.{name}"].astype(np.int64)
    state.opt.load_state_arrays({k[5:]: v for k, v in tensors.items() if k.startswith("adam.")})
    gain = {k[9:]: v for k, v in tensors.items() if k.startswith("gainadam.")}
    if gain:
        state.gain_opt.load_state_arrays(gain)
    state.epoch = meta["epoch"]
    state.history = meta["history"]
    state.act_range = meta["act_range"]
    if meta["scheduler"] and state.scheduler is not None:
        state.scheduler = PlateauScheduler(**meta["scheduler"])
    state.streams.set_state(meta["streams"])
    return state
