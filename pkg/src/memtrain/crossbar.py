"""A 1T1R crossbar tile with bit-serial DACs and a binary-weighted ADC.

An input code is applied as ``dac_bits`` one-bit pulses; cycle ``n`` carries
bit ``n`` (1 = LSB). The ADC halves its running sample each cycle, so after
the last cycle it holds ``sum_n 2^(n-1-dac_bits) * I[n]`` and converts that
weighted current once.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .device import DeviceConfig, level_separation, read_currents

SNAPSHOT_MAGIC = b"MTCB"


class DimensionMismatch(ValueError):
    pass


class InputOutOfRange(ValueError):
    pass


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class TileConfig:
    rows: int = 64
    cols: int = 64
    dac_bits: int = 8
    adc_bits: int = 8
    adc_i_max: float = 70.0
    sigma_adc: float = 0.549
    group_size: int = 8

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("tile must have at least one row and one column")
        if self.cols % self.group_size:
            raise ValueError(f"cols ({self.cols}) must be divisible by group_size ({self.group_size})")
        if self.adc_i_max <= 0:
            raise ValueError("adc_i_max must be positive")
        if self.sigma_adc < 0:
            raise ValueError("sigma_adc must be >= 0")
        if self.dac_bits < 1 or self.adc_bits < 1:
            raise ValueError("converter widths must be >= 1 bit")

    @property
    def adc_levels(self) -> int:
        return 2 ** self.adc_bits - 1

    @property
    def adc_lsb(self) -> float:
        return self.adc_i_max / self.adc_levels

    @property
    def max_input(self) -> int:
        return 2 ** self.dac_bits - 1

    @property
    def cycle_weights(self) -> np.ndarray:
        n = np.arange(1, self.dac_bits + 1)
        return 2.0 ** (n - 1 - self.dac_bits)


@dataclass
class Tile:
    """Conductances (µS) of a ``rows x cols`` array plus the configs needed to read it."""

    config: TileConfig
    device: DeviceConfig
    g: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.g is None:
            self.g = np.zeros((self.config.rows, self.config.cols))
        self.g = np.asarray(self.g, dtype=np.float64)
        if self.g.shape != (self.config.rows, self.config.cols):
            raise DimensionMismatch(
                f"conductance matrix {self.g.shape} != tile {(self.config.rows, self.config.cols)}")


@dataclass(frozen=True)
class DigitalColumnOutputs:
    codes: np.ndarray


def _check_mode(mode: str) -> bool:
    if mode not in ("ideal", "noisy"):
        raise ValueError(f"mode must be 'ideal' or 'noisy', got {mode!r}")
    return mode == "noisy"


def column_currents(tile: Tile, bit_vector, mode: str = "ideal",
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Bit-line currents (µA) for one drive pattern; each active cell is read once."""
    noisy = _check_mode(mode)
    bits = np.asarray(bit_vector)
    if bits.shape != (tile.config.rows,):
        raise DimensionMismatch(f"bit vector of length {bits.shape} for {tile.config.rows} rows")
    active = bits.astype(bool)
    if not active.any():
        return np.zeros(tile.config.cols)
    cells = tile.g[active]
    currents = read_currents(cells, tile.device, rng if noisy else None)
    return currents.sum(axis=0)


def adc_convert(cycle_currents, cfg: TileConfig, rng: np.random.Generator | None = None,
                noisy: bool = True):
    """Weight per-cycle currents and convert to an unsigned code.

    ``cycle_currents`` has the cycles on its last axis (length ``dac_bits``);
    leading axes are converted independently.
    """
    c = np.asarray(cycle_currents, dtype=np.float64)
    if c.shape[-1] != cfg.dac_bits:
        raise DimensionMismatch(f"expected {cfg.dac_bits} cycle currents, got {c.shape[-1]}")
    if np.any(c < 0):
        raise ValueError("cycle currents must be non-negative")
    weighted = c @ cfg.cycle_weights
    codes = quantize_weighted(weighted, cfg, rng if noisy else None)
    return int(codes) if codes.ndim == 0 else codes


def quantize_weighted(weighted, cfg: TileConfig, rng: np.random.Generator | None) -> np.ndarray:
    """ADC conversion of weighted currents (µA), with optional conversion noise."""
    w = np.asarray(weighted, dtype=np.float64)
    if rng is not None and cfg.sigma_adc > 0:
        w = w + rng.normal(0.0, cfg.sigma_adc, size=w.shape)
    # multiply before dividing: keeps exact half-codes exact (35 µA at 70 µA full scale -> 127.5)
    codes = np.floor(w * cfg.adc_levels / cfg.adc_i_max + 0.5)
    return np.clip(codes, 0, cfg.adc_levels).astype(np.int64)


def _check_inputs(inputs, cfg: TileConfig, rows: int) -> np.ndarray:
    x = np.asarray(inputs)
    if x.shape[-1] != rows:
        raise DimensionMismatch(f"input length {x.shape[-1]} != {rows} rows")
    if not np.issubdtype(x.dtype, np.integer):
        if np.any(x != np.round(x)):
            raise InputOutOfRange("inputs must be integer DAC codes")
        x = x.astype(np.int64)
    if x.size and (x.min() < 0 or x.max() > cfg.max_input):
        raise InputOutOfRange(f"inputs must lie in [0, {cfg.max_input}]")
    return x.astype(np.int64)


def tile_vmm(tile: Tile, inputs, mode: str = "ideal",
             rng: np.random.Generator | None = None) -> DigitalColumnOutputs:
    """Bit-serial VMM of one input vector, cycle by cycle."""
    noisy = _check_mode(mode)
    cfg = tile.config
    x = _check_inputs(inputs, cfg, cfg.rows)
    if x.ndim != 1:
        raise DimensionMismatch("tile_vmm takes a single input vector")
    cycles = np.empty((cfg.cols, cfg.dac_bits))
    for n in range(cfg.dac_bits):
        bits = (x >> n) & 1
        cycles[:, n] = column_currents(tile, bits, mode, rng)
    return DigitalColumnOutputs(codes=adc_convert(cycles, cfg, rng, noisy=noisy))


def bit_serial_batch(g: np.ndarray, inputs: np.ndarray, cfg: TileConfig,
                     v_read: float) -> np.ndarray:
    """Noiseless bit-serial VMM over a batch: ``inputs`` is ``(batch, rows)``."""
    x = np.asarray(inputs, dtype=np.int64)
    weighted = np.zeros((x.shape[0], g.shape[1]))
    for n, wn in enumerate(cfg.cycle_weights):
        bits = ((x >> n) & 1).astype(np.float64)
        weighted += wn * ((bits @ g) * v_read)
    return quantize_weighted(weighted, cfg, None)


def _bit_power_table(dac_bits: int) -> np.ndarray:
    codes = np.arange(2 ** dac_bits)
    table = np.zeros(codes.shape)
    for n in range(1, dac_bits + 1):
        table += ((codes >> (n - 1)) & 1) * 4.0 ** (n - 1 - dac_bits)
    return table


_POWER_TABLES: dict[int, np.ndarray] = {}


def input_read_variance(x_codes: np.ndarray, dac_bits: int) -> np.ndarray:
    """Per-vector ``sum_i sum_n 4^(n-1-dac_bits) b_in``: read-noise variance in units of sigma^2."""
    table = _POWER_TABLES.get(dac_bits)
    if table is None:
        table = _POWER_TABLES.setdefault(dac_bits, _bit_power_table(dac_bits))
    return table[np.asarray(x_codes, dtype=np.int64)].sum(axis=-1, keepdims=True)


def weighted_currents(x_codes: np.ndarray, g: np.ndarray, device: DeviceConfig,
                      cfg: TileConfig, rng: np.random.Generator | None,
                      read_var: np.ndarray | None = None) -> np.ndarray:
    """Weighted column currents for a batch of input codes in one matmul.

    Equal to the cycle-by-cycle sum because the binary weights are linear. With
    ``rng`` the per-read noise is drawn in aggregate: independent reads give a
    Gaussian whose variance is ``sigma^2 * sum_i sum_n 4^(n-1-dac_bits) b_in``.
    The per-read floor at 0 µA is not applied on this path. ``read_var`` may
    pass a precomputed :func:`input_read_variance`.
    """
    x = np.asarray(x_codes, dtype=np.float64)
    out = (x @ g) * (device.v_read / 2 ** cfg.dac_bits)
    if rng is not None and device.sigma_read > 0:
        var = input_read_variance(x_codes, cfg.dac_bits) if read_var is None else read_var
        std = device.sigma_read * level_separation(device) * np.sqrt(var)
        out = out + std * rng.standard_normal(out.shape)
    return out


def save_tile(path, g: np.ndarray) -> None:
    """Write a conductance snapshot: ``MTCB``, rows, cols (u32 LE), then float64 LE row-major."""
    g = np.ascontiguousarray(g, dtype="<f8")
    if g.ndim != 2:
        raise DimensionMismatch("snapshot must be a 2-D conductance matrix")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", *g.shape))
        fh.write(g.tobytes())


def load_tile(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: not a tile snapshot (bad magic)")
    rows, cols = struct.unpack("<II", data[4:12])
    expected = 12 + 8 * rows * cols
    if len(data) != expected:
        raise SnapshotError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=12).reshape(rows, cols).astype(np.float64)
