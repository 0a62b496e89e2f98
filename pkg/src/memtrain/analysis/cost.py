"""Analytic inference cost of a network mapped onto crossbar tiles.

Energy counts tile activations (one full-array VMM each). Latency counts
sequential VMM steps: all tiles of a layer fire together, so a layer needs
one step per output position. With inter-layer pipelining the slowest layer
sets the pace, plus one step per extra stage to fill the pipeline.
Replicating a layer onto extra tiles divides its step count.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from ..mapping import GeometryError, row_group_size
from ..netcore import ModelSpec

MODES = ("serial", "pipelined", "pipelined+copies")

CSV_COLUMNS = [
    "model", "devices", "flops", "crossbars", "crossbars_with_copies", "ops", "tile_ops",
    "latency_ms", "latency_pipelined_ms", "latency_copies_ms", "energy_per_image_mj",
]


@dataclass(frozen=True)
class CostConfig:
    tile_rows: int = 64
    tile_cols: int = 64
    e_tile_op: float = 2.66  # nJ per full-tile VMM
    clock_mhz: float = 100.0
    dac_bits: int = 8
    group_size: int = 8
    t_op_us: float | None = None  # None: derived from the conversion cycles
    copies: dict = field(default_factory=dict)
    max_copies_per_tile: int = 2
    pipeline_fill: bool = True

    def __post_init__(self):
        if self.e_tile_op <= 0:
            raise ValueError("e_tile_op must be positive")
        if self.tile_rows < 1 or self.tile_cols < 2:
            raise GeometryError("tiles need >= 1 row and >= 2 columns")
        if self.tile_cols % self.group_size:
            raise ValueError("tile_cols must be divisible by group_size")
        if self.t_op_us is not None and self.t_op_us <= 0:
            raise ValueError("t_op must be positive")
        if self.clock_mhz <= 0:
            raise ValueError("clock must be positive")
        for name, c in self.copies.items():
            if int(c) < 1:
                raise ValueError(f"copy factor for {name} must be >= 1")

    @property
    def t_op(self) -> float:
        """µs per sequential VMM step: (dac_bits + 1) cycles for each shared-ADC column."""
        if self.t_op_us is not None:
            return self.t_op_us
        return (self.dac_bits + 1) * (self.tile_cols // self.group_size) / self.clock_mhz


@dataclass(frozen=True)
class LayerCost:
    name: str
    fan_in: int
    fan_out: int
    positions: int
    row_groups: int
    col_groups: int
    copies: int
    tiles_with_copies: int

    @property
    def tiles(self) -> int:
        return self.row_groups * self.col_groups

    @property
    def tile_ops(self) -> int:
        return self.positions * self.tiles

    @property
    def macs(self) -> int:
        return self.positions * self.fan_in * self.fan_out

    @property
    def steps_with_copies(self) -> int:
        return math.ceil(self.positions / self.copies)


@dataclass(frozen=True)
class Resources:
    model: str
    layers: tuple[LayerCost, ...]

    @property
    def devices(self) -> int:
        return 2 * sum(l.fan_in * l.fan_out for l in self.layers)

    @property
    def crossbars(self) -> int:
        return sum(l.tiles for l in self.layers)

    @property
    def crossbars_with_copies(self) -> int:
        return sum(l.tiles_with_copies for l in self.layers)

    @property
    def ops(self) -> int:
        return sum(l.positions for l in self.layers)

    @property
    def tile_ops(self) -> int:
        return sum(l.tile_ops for l in self.layers)

    @property
    def flops(self) -> int:
        return 2 * sum(l.macs for l in self.layers)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return self.devices, self.crossbars, self.ops, self.tile_ops


def _replica_tiles(tiles: int, row_groups: int, fan_in: int, copies: int, cost: CostConfig) -> int:
    # a layer that fits in one row group can stack replicas on spare rows of the same tile
    pack = 1
    if row_groups == 1:
        pack = max(1, min(cost.max_copies_per_tile, cost.tile_rows // fan_in))
    return tiles * math.ceil(copies / pack)


def count_resources(model: ModelSpec, cost: CostConfig) -> Resources:
    layers = []
    shapes = model.shapes()
    known = {l.name for l in model.weighted_layers()}
    unknown = set(cost.copies) - known
    if unknown:
        raise GeometryError(f"copy plan names unknown layers: {sorted(unknown)}")
    for i, layer in enumerate(model.layers):
        if not layer.weighted:
            continue
        in_shape = shapes[model.sources(i)[0]]
        fan_in = layer.fan_in(in_shape)
        fan_out = layer.param_shapes(in_shape)["weight"][1]
        k2 = getattr(layer, "kernel", 1) ** 2
        rows = row_group_size(cost.tile_rows, k2)
        rg = math.ceil(fan_in / rows)
        cg = math.ceil(fan_out / (cost.tile_cols // 2))
        copies = int(cost.copies.get(layer.name, 1))
        layers.append(LayerCost(
            name=layer.name, fan_in=fan_in, fan_out=fan_out, positions=layer.positions(in_shape),
            row_groups=rg, col_groups=cg, copies=copies,
            tiles_with_copies=_replica_tiles(rg * cg, rg, fan_in, copies, cost)))
    if not layers:
        raise GeometryError("model has no crossbar layers")
    return Resources(model=model.name, layers=tuple(layers))


@dataclass(frozen=True)
class CostReport:
    model: str
    devices: int
    flops: int
    crossbars: int
    crossbars_with_copies: int
    ops: int
    tile_ops: int
    latency_ms: float
    latency_pipelined_ms: float
    latency_copies_ms: float
    energy_per_image_mj: float
    peak_tops_w: float
    normalized_tops_w: float

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def latency_ms(res: Resources, cost: CostConfig, mode: str = "serial") -> float:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "serial":
        steps = res.ops
    else:
        per_layer = [l.steps_with_copies if mode == "pipelined+copies" else l.positions for l in res.layers]
        steps = max(per_layer)
        if cost.pipeline_fill:
            steps += len(per_layer) - 1
    return steps * cost.t_op / 1000.0


def energy_mj(res: Resources, cost: CostConfig) -> float:
    return res.tile_ops * cost.e_tile_op * 1e-6


def tops_per_watt(cost: CostConfig, input_bits: int = 1, weight_bits: int = 1) -> tuple[float, float]:
    """Peak TOPS/W of one tile (2 ops per MAC) and the bit-normalized figure."""
    if input_bits < 1 or weight_bits < 1:
        raise ValueError("bit widths must be positive")
    peak = 2 * cost.tile_rows * cost.tile_cols / (cost.e_tile_op * 1e-9) / 1e12
    return peak, peak * input_bits * weight_bits


def energy_latency(res: Resources, cost: CostConfig, input_bits: int = 8, weight_bits: int = 4) -> CostReport:
    peak, norm = tops_per_watt(cost, input_bits, weight_bits)
    return CostReport(
        model=res.model, devices=res.devices, flops=res.flops, crossbars=res.crossbars,
        crossbars_with_copies=res.crossbars_with_copies, ops=res.ops, tile_ops=res.tile_ops,
        latency_ms=latency_ms(res, cost, "serial"),
        latency_pipelined_ms=latency_ms(res, cost, "pipelined"),
        latency_copies_ms=latency_ms(res, cost, "pipelined+copies"),
        energy_per_image_mj=energy_mj(res, cost), peak_tops_w=peak, normalized_tops_w=norm)


def reports_csv(reports: list[CostReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r.row()])
    return buf.getvalue()
