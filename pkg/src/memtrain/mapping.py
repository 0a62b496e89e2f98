"""Signed weights on crossbars: dual-column pairs, im2col unrolling, tiling.

A weight ``w`` becomes a device pair on adjacent columns,
``g_pos = max(w, 0) * scale + g_min`` and ``g_neg = max(-w, 0) * scale + g_min``
with ``scale = (g_max - g_min) / weight_clip``. Large layers are split over a
grid of tiles; row groups produce partial sums that are added digitally after
each tile's ADC, each scaled by that tile's ``alpha``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .crossbar import (DimensionMismatch, Tile, TileConfig, input_read_variance,
                       quantize_weighted, weighted_currents)
from .device import DeviceConfig, program_array


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class MapConfig:
    g_min: float
    g_max: float
    weight_clip: float = 1.0
    tile_rows: int = 64
    tile_cols: int = 64

    def __post_init__(self):
        if not self.g_max > self.g_min > 0:
            raise ValueError("need g_max > g_min > 0")
        if self.weight_clip <= 0:
            raise ValueError("weight_clip must be positive")

    @property
    def scale(self) -> float:
        """µS per unit weight."""
        return (self.g_max - self.g_min) / self.weight_clip

    @classmethod
    def for_device(cls, device: DeviceConfig, tile: TileConfig, weight_clip: float = 1.0):
        return cls(g_min=device.g_min, g_max=device.g_max, weight_clip=weight_clip,
                   tile_rows=tile.rows, tile_cols=tile.cols)


def weights_to_pairs(W, cfg: MapConfig):
    W = np.asarray(W, dtype=np.float64)
    scale = cfg.scale
    w = np.clip(W, -cfg.weight_clip, cfg.weight_clip)
    g_pos = np.maximum(w, 0.0) * scale + cfg.g_min
    g_neg = np.maximum(-w, 0.0) * scale + cfg.g_min
    return g_pos, g_neg, scale


def pairs_to_weights(g_pos, g_neg, cfg: MapConfig) -> np.ndarray:
    g_pos = np.asarray(g_pos, dtype=np.float64)
    g_neg = np.asarray(g_neg, dtype=np.float64)
    if g_pos.shape != g_neg.shape:
        raise DimensionMismatch(f"pair matrices differ: {g_pos.shape} vs {g_neg.shape}")
    return (g_pos - g_neg) / cfg.scale


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Unroll sliding windows into rows.

    ``x`` is ``C x H x W`` (or batched ``N x C x H x W``). Row ``p`` holds the
    receptive field of position ``p`` (row-major over output positions, and
    over images for batched input); its columns run channel-major, then kernel
    row, then kernel column.
    """
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise GeometryError(f"expected C x H x W or N x C x H x W input, got shape {x.shape}")
    n, c, h, w = x.shape
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    if ho < 1 or wo < 1 or k < 1 or stride < 1 or pad < 0:
        raise GeometryError(f"kernel {k}/stride {stride}/pad {pad} does not fit a {h}x{w} input")
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (n, c, ho, wo, k, k) -> (n, ho, wo, c, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols


def col2im(cols: np.ndarray, input_shape, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Adjoint of :func:`im2col` for batched input: scatter-add windows back."""
    n, c, h, w = input_shape
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    cols = cols.reshape(n, ho, wo, c, k, k)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        i_end = i + stride * ho
        for j in range(k):
            j_end = j + stride * wo
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def _groups(total: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(s + size, total)) for s in range(0, total, size)]


def row_group_size(tile_rows: int, kernel_area: int = 1) -> int:
    """Rows per tile for a layer; convolutions keep whole channels on one tile."""
    if kernel_area <= tile_rows:
        return (tile_rows // kernel_area) * kernel_area
    return tile_rows


@dataclass
class LayerMapping:
    """Placement of one layer's weights over a grid of tiles.

    Tiles are ordered row-group-major. ``g_pos``/``g_neg`` are the canonical
    device states (``fan_in x fan_out``); :attr:`tiles` materialises the
    physical arrays with pairs on adjacent columns and unused cells at 0 µS.
    """

    layer_dims: tuple[int, int]
    map_config: MapConfig
    tile_config: TileConfig
    device: DeviceConfig
    row_groups: list[tuple[int, int]]
    col_groups: list[tuple[int, int]]
    alpha: np.ndarray = None
    g_pos: np.ndarray = None
    g_neg: np.ndarray = None
    alpha_init: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        fan_in, fan_out = self.layer_dims
        if self.g_pos is None:
            self.g_pos = np.full((fan_in, fan_out), self.map_config.g_min)
        if self.g_neg is None:
            self.g_neg = np.full((fan_in, fan_out), self.map_config.g_min)
        if self.alpha is None:
            self.alpha = np.full(self.n_tiles, self.dequant_gain)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha_init is None:
            self.alpha_init = np.full(self.n_tiles, self.dequant_gain)

    @property
    def n_tiles(self) -> int:
        return len(self.row_groups) * len(self.col_groups)

    @property
    def weight_clip(self) -> float:
        return self.map_config.weight_clip

    @property
    def dequant_gain(self) -> float:
        """Weight x input-code units per ADC code for an ideal tile."""
        t = self.tile_config
        return (2 ** t.dac_bits) * t.adc_lsb / (self.map_config.scale * self.device.v_read)

    def tile_index(self, rg: int, cg: int) -> int:
        return rg * len(self.col_groups) + cg

    @property
    def row_slices(self) -> list[tuple[int, int]]:
        return [self.row_groups[t // len(self.col_groups)] for t in range(self.n_tiles)]

    @property
    def col_slices(self) -> list[tuple[int, int]]:
        return [self.col_groups[t % len(self.col_groups)] for t in range(self.n_tiles)]

    @property
    def col_map(self) -> np.ndarray:
        """``(fan_out, 3)``: column group, local positive column, local negative column."""
        rows = []
        for cg, (c0, c1) in enumerate(self.col_groups):
            for j in range(c0, c1):
                rows.append((cg, 2 * (j - c0), 2 * (j - c0) + 1))
        return np.array(rows, dtype=np.int64)

    def tile(self, t: int) -> Tile:
        (r0, r1), (c0, c1) = self.row_slices[t], self.col_slices[t]
        g = np.zeros((self.tile_config.rows, self.tile_config.cols))
        g[: r1 - r0, 0 : 2 * (c1 - c0) : 2] = self.g_pos[r0:r1, c0:c1]
        g[: r1 - r0, 1 : 2 * (c1 - c0) : 2] = self.g_neg[r0:r1, c0:c1]
        return Tile(config=self.tile_config, device=self.device, g=g)

    @property
    def tiles(self) -> list[Tile]:
        return [self.tile(t) for t in range(self.n_tiles)]

    def set_tile(self, t: int, g: np.ndarray) -> None:
        (r0, r1), (c0, c1) = self.row_slices[t], self.col_slices[t]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (self.tile_config.rows, self.tile_config.cols):
            raise DimensionMismatch(f"tile snapshot {g.shape} does not match tile geometry")
        self.g_pos[r0:r1, c0:c1] = g[: r1 - r0, 0 : 2 * (c1 - c0) : 2]
        self.g_neg[r0:r1, c0:c1] = g[: r1 - r0, 1 : 2 * (c1 - c0) : 2]

    def read_weights(self) -> np.ndarray:
        """Noiseless readout of the devices in weight units."""
        return pairs_to_weights(self.g_pos, self.g_neg, self.map_config)

    def alpha_per_column(self, rg: int) -> np.ndarray:
        out = np.empty(self.layer_dims[1])
        for cg, (c0, c1) in enumerate(self.col_groups):
            out[c0:c1] = self.alpha[self.tile_index(rg, cg)]
        return out

    def manifest(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "weight_clip": self.weight_clip,
            "g_min": self.map_config.g_min,
            "g_max": self.map_config.g_max,
            "tile_rows": self.tile_config.rows,
            "tile_cols": self.tile_config.cols,
            "tiles": [
                {"index": t, "rows": list(self.row_slices[t]), "weight_cols": list(self.col_slices[t]),
                 "alpha": float(self.alpha[t])}
                for t in range(self.n_tiles)
            ],
            "col_map": self.col_map.tolist(),
        }

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True)


def plan_tiling(fan_in: int, fan_out: int, cfg: MapConfig, *, kernel_area: int = 1,
                tile: TileConfig | None = None, device: DeviceConfig | None = None) -> LayerMapping:
    """Split a ``fan_in x fan_out`` layer over tiles; devices start at zero weight.

    Each tile holds ``tile_cols // 2`` weight columns. Convolution rows are
    split on channel boundaries (``kernel_area`` rows per channel).
    """
    if cfg.tile_cols < 2:
        raise GeometryError("dual-column mapping needs at least 2 tile columns")
    if fan_in < 1 or fan_out < 1:
        raise GeometryError(f"layer must have positive dimensions, got {fan_in}x{fan_out}")
    if kernel_area < 1:
        raise GeometryError("kernel_area must be >= 1")
    if tile is None:
        tile = TileConfig(rows=cfg.tile_rows, cols=cfg.tile_cols, group_size=math.gcd(cfg.tile_cols, 8))
    if (tile.rows, tile.cols) != (cfg.tile_rows, cfg.tile_cols):
        raise GeometryError("tile config and map config disagree on tile geometry")
    if device is None:
        device = DeviceConfig(i_min=cfg.g_min, i_max=cfg.g_max, v_read=1.0)
    rows = row_group_size(cfg.tile_rows, kernel_area)
    return LayerMapping(
        layer_dims=(fan_in, fan_out), map_config=cfg, tile_config=tile, device=device,
        row_groups=_groups(fan_in, rows), col_groups=_groups(fan_out, cfg.tile_cols // 2))


def program_weights(mapping: LayerMapping, W, rng: np.random.Generator | None, mask=None):
    """Write-and-verify the device pairs of ``W`` (optionally only where ``mask``).

    ``rng=None`` programs exactly. Returns ``(trials, verified)`` for the
    programmed weights, each counting the pair (two devices).
    """
    g_pos, g_neg, _ = weights_to_pairs(W, mapping.map_config)
    if mask is None:
        mask = np.ones(g_pos.shape, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)
    targets = np.concatenate([g_pos.flat[idx], g_neg.flat[idx]])
    current = np.concatenate([mapping.g_pos.flat[idx], mapping.g_neg.flat[idx]])
    if rng is None:
        final, trials, ok = targets, np.ones(targets.size, dtype=np.int64), np.ones(targets.size, dtype=bool)
    else:
        final, trials, ok = program_array(current, targets, mapping.device, rng)
    mapping.g_pos.flat[idx] = final[: idx.size]
    mapping.g_neg.flat[idx] = final[idx.size :]
    return trials[: idx.size] + trials[idx.size :], ok[: idx.size] & ok[idx.size :]


def cim_linear_forward(mapping: LayerMapping, x_codes, mode: str = "ideal",
                       rng: np.random.Generator | None = None, return_partials: bool = False,
                       adc_rng: np.random.Generator | None = None):
    """Crossbar forward for ``batch x fan_in`` unsigned input codes.

    Returns ``batch x fan_out`` values in weight x input-code units: for every
    tile the positive and negative column codes are subtracted, scaled by the
    tile's ``alpha`` and summed over row groups. Multiply by the activation
    step to get weight x activation units. ``adc_rng`` draws the conversion
    noise from a separate stream (default: ``rng``).
    """
    if mode not in ("ideal", "noisy"):
        raise ValueError(f"mode must be 'ideal' or 'noisy', got {mode!r}")
    x = np.asarray(x_codes)
    if x.ndim == 1:
        x = x[None]
    fan_in, fan_out = mapping.layer_dims
    if x.shape[-1] != fan_in:
        raise DimensionMismatch(f"input width {x.shape[-1]} != fan_in {fan_in}")
    cfg = mapping.tile_config
    noise = rng if mode == "noisy" else None
    adc_noise = (adc_rng if adc_rng is not None else rng) if mode == "noisy" else None
    out = np.zeros((x.shape[0], fan_out))
    partials = []
    xf = x.astype(np.float64)
    for rg, (r0, r1) in enumerate(mapping.row_groups):
        xs = xf[:, r0:r1]
        var = None
        if noise is not None and mapping.device.sigma_read > 0:
            var = input_read_variance(x[:, r0:r1], cfg.dac_bits)
        # both columns of every pair see the same inputs: one product, one draw
        g = np.concatenate([mapping.g_pos[r0:r1], mapping.g_neg[r0:r1]], axis=1)
        q = quantize_weighted(weighted_currents(xs, g, mapping.device, cfg, noise, var), cfg, adc_noise)
        signed = q[:, :fan_out] - q[:, fan_out:]
        if return_partials:
            partials.append(signed)
        out += signed * mapping.alpha_per_column(rg)
    if return_partials:
        return out, partials
    return out
