"""Run configuration: an INI file with one typed section per module.

Sections ``[device]``, ``[tile]``, ``[trainer]`` and ``[cost]`` map onto the
matching config dataclasses; keys are checked against their fields and values
are converted by the declared field type. ``[run]``, ``[data]`` and
``[transfer]`` hold the remaining settings.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..analysis.cost import CostConfig
from ..crossbar import TileConfig
from ..device import DeviceConfig
from ..netcore import PRESETS
from ..rng import check_seed
from ..trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    dataset: str = "mnist"
    root: str = ""
    # fall back to a generated CIFAR-format file when the real batches are absent
    synthetic_fallback: bool = False
    train_subset: int | None = None


@dataclass
class TransferConfig:
    sigmas: list = field(default_factory=lambda: [0.5])
    samples: int = 10
    n_levels: int = 16
    software_epochs: int = 10
    calib_images: int = 512


@dataclass
class RunConfig:
    model: str = "lenet"
    seed: int = 0
    out: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    device: DeviceConfig = field(default_factory=DeviceConfig)
    tile: TileConfig = field(default_factory=TileConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    source: str | None = None


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(raw: str, tp, where: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _convert(raw, args[0], where)
    try:
        if tp is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if tp is list or origin is list:
            return [float(x) for x in raw.replace(",", " ").split()]
        if tp is dict or origin is dict:
            out = {}
            for item in filter(None, (s.strip() for s in raw.split(","))):
                k, sep, v = item.partition(":")
                if not sep:
                    raise ValueError(f"expected name:value, got {item!r}")
                out[k.strip()] = int(v)
            return out
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None
    raise ConfigError(f"{where}: unsupported field type {tp}")


def _build(cls, section: configparser.SectionProxy | None, where: str):
    if section is None:
        return cls()
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"[{where}] unknown key {key!r}; allowed: {sorted(names)}")
        kwargs[key] = _convert(raw, hints[key], f"[{where}] {key}")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"[{where}] {e}") from None


SECTIONS = {"data": DataConfig, "device": DeviceConfig, "tile": TileConfig, "trainer": TrainConfig,
            "cost": CostConfig, "transfer": TransferConfig}


def parse_config(text: str, source: str | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    allowed = set(SECTIONS) | {"run"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown sections {sorted(extra)}; allowed: {sorted(allowed)}")
    run = cp["run"] if cp.has_section("run") else {}
    for key in run:
        if key not in ("model", "seed", "out"):
            raise ConfigError(f"[run] unknown key {key!r}")
    model = run.get("model", "lenet").strip()
    if model not in PRESETS:
        raise ConfigError(f"[run] model must be one of {sorted(PRESETS)}, got {model!r}")
    try:
        seed = check_seed(run.get("seed", "0"))
    except ValueError as e:
        raise ConfigError(f"[run] seed: {e}") from None
    parts = {name: _build(cls, cp[name] if cp.has_section(name) else None, name)
             for name, cls in SECTIONS.items()}
    cfg = RunConfig(model=model, seed=seed, out=run.get("out", "runs").strip(), source=source, **parts)
    if cfg.tile.rows != cfg.cost.tile_rows or cfg.tile.cols != cfg.cost.tile_cols:
        raise ConfigError("[tile] and [cost] disagree on tile geometry")
    if cfg.data.dataset not in ("mnist", "cifar10"):
        raise ConfigError(f"[data] dataset must be 'mnist' or 'cifar10', got {cfg.data.dataset!r}")
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from None
    return parse_config(text, str(p))


def bundled_config(name: str) -> Path:
    """Path of an annotated config shipped with the package (``lenet``, ``vgg8``, ``resnet18``)."""
    p = Path(__file__).resolve().parent.parent / "configs" / f"{name}.cfg"
    if not p.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return p
