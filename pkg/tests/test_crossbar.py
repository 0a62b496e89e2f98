import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtrain.crossbar import (DimensionMismatch, InputOutOfRange, SnapshotError, Tile, TileConfig,
                               adc_convert, bit_serial_batch, column_currents, input_read_variance,
                               load_tile, save_tile, tile_vmm, weighted_currents)
from memtrain.device import DeviceConfig


def oracle_codes(g, x, cfg: TileConfig, v_read: float):
    """Full-precision dot product, then one ADC conversion (exact rational arithmetic)."""
    from fractions import Fraction
    out = []
    for j in range(g.shape[1]):
        dot = sum(Fraction(int(x[i])) * Fraction(float(g[i, j])) for i in range(g.shape[0]))
        w = dot * Fraction(v_read) / 2 ** cfg.dac_bits
        code = int(np.floor(w * cfg.adc_levels / Fraction(cfg.adc_i_max) + Fraction(1, 2)))
        out.append(min(max(code, 0), cfg.adc_levels))
    return np.array(out)


def fast_oracle(g, x, cfg: TileConfig, v_read: float):
    w = (x.astype(np.float64) @ g) * v_read / 2 ** cfg.dac_bits
    return np.clip(np.floor(w * cfg.adc_levels / cfg.adc_i_max + 0.5), 0, cfg.adc_levels).astype(np.int64)


DEV = DeviceConfig(i_min=1, i_max=7, v_read=0.1, sigma_read=0, sigma_prog=0)


def tile_of(g, **kw):
    rows, cols = g.shape
    cfg = TileConfig(rows=rows, cols=cols, group_size=1, sigma_adc=0, **kw)
    return Tile(config=cfg, device=DEV, g=g)


def test_column_currents_examples():
    t = tile_of(np.array([[10.0, 20.0], [30.0, 40.0]]))
    np.testing.assert_allclose(column_currents(t, [1, 1]), [4.0, 6.0])
    np.testing.assert_allclose(column_currents(t, [1, 0]), [1.0, 2.0])
    np.testing.assert_array_equal(column_currents(t, [0, 0]), [0.0, 0.0])


def test_adc_examples():
    cfg = TileConfig(sigma_adc=0)
    assert adc_convert(np.zeros(8), cfg) == 0
    msb = np.zeros(8)
    msb[7] = 70.0
    assert adc_convert(msb, cfg) == 128


def test_default_adc_noise_is_two_lsb():
    cfg = TileConfig()
    assert cfg.sigma_adc == pytest.approx(2 * cfg.adc_lsb, abs=1e-3)


def test_single_cell_half_scale():
    # x = 255 gives weighted current I * 255/256; choose I so that this is 35 µA
    g = np.array([[35.0 * 256 / 255 / 0.1]])
    t = tile_of(g)
    assert tile_vmm(t, [255]).codes[0] == 128


def test_zero_input_gives_zero_codes(rng):
    t = tile_of(rng.uniform(10, 70, size=(8, 8)))
    np.testing.assert_array_equal(tile_vmm(t, np.zeros(8, int)).codes, 0)


def test_exhaustive_4x4_matches_oracle():
    # every 2-bit input pattern on a 4x4 tile with 2-bit DACs, several conductance draws
    gen = np.random.default_rng(0)
    for _ in range(8):
        g = gen.uniform(10, 70, size=(4, 4))
        t = tile_of(g, dac_bits=2, adc_i_max=20.0)
        for x in itertools.product(range(4), repeat=4):
            x = np.array(x)
            np.testing.assert_array_equal(tile_vmm(t, x).codes, oracle_codes(g, x, t.config, 0.1))


def test_exhaustive_inputs_8bit_4x4_matches_oracle():
    gen = np.random.default_rng(1)
    g = gen.uniform(10, 70, size=(4, 4))
    t = tile_of(g, adc_i_max=25.0)
    codes = np.array(list(itertools.product(range(0, 256, 5), repeat=2)))
    for a, b in codes:
        x = np.array([a, b, 255 - a, 255 - b])
        np.testing.assert_array_equal(tile_vmm(t, x).codes, oracle_codes(g, x, t.config, 0.1))


def test_random_64x64_batch_matches_oracle():
    gen = np.random.default_rng(2)
    cfg = TileConfig(rows=64, cols=64, sigma_adc=0, adc_i_max=400.0)
    n = 10_000
    for chunk in range(10):
        g = gen.uniform(10, 70, size=(64, 64))
        x = gen.integers(0, 256, size=(n // 10, 64))
        np.testing.assert_array_equal(bit_serial_batch(g, x, cfg, 0.1), fast_oracle(g, x, cfg, 0.1))


def test_tile_vmm_agrees_with_batch_path():
    gen = np.random.default_rng(3)
    g = gen.uniform(10, 70, size=(64, 64))
    t = Tile(config=TileConfig(sigma_adc=0, adc_i_max=400.0), device=DEV, g=g)
    x = gen.integers(0, 256, size=(20, 64))
    batch = bit_serial_batch(g, x, t.config, 0.1)
    for k in range(20):
        np.testing.assert_array_equal(tile_vmm(t, x[k]).codes, batch[k])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_small_tiles_match_exact_oracle(rows, cols, seed):
    gen = np.random.default_rng(seed)
    g = gen.uniform(10, 70, size=(rows, cols))
    t = tile_of(g, adc_i_max=float(gen.uniform(5, 60)))
    x = gen.integers(0, 256, size=rows)
    np.testing.assert_array_equal(tile_vmm(t, x).codes, oracle_codes(g, x, t.config, 0.1))


def test_input_guards():
    t = tile_of(np.full((2, 2), 10.0))
    with pytest.raises(InputOutOfRange):
        tile_vmm(t, [256, 0])
    with pytest.raises(InputOutOfRange):
        tile_vmm(t, [-1, 0])
    with pytest.raises(InputOutOfRange):
        tile_vmm(t, [0.5, 0])
    with pytest.raises(DimensionMismatch):
        tile_vmm(t, [1, 2, 3])
    with pytest.raises(ValueError):
        tile_vmm(t, [1, 1], mode="fuzzy")


def test_read_variance_formula():
    # code 255: sum over 8 cycles of 4^(n-9) = (1 - 4^-8) / 3
    v = input_read_variance(np.array([[255, 0, 1]]), 8)
    assert v[0, 0] == pytest.approx((1 - 4.0 ** -8) / 3 + 4.0 ** -8)


def test_aggregated_noise_matches_cycle_by_cycle():
    # the one-draw noise on the weighted current has the same std as summing per-read noise
    dev = DeviceConfig(i_min=1, i_max=7, sigma_read=0.3)
    cfg = TileConfig(rows=4, cols=1, group_size=1, sigma_adc=0)
    g = np.full((4, 1), 40.0)
    x = np.array([[200, 17, 255, 3]])
    gen = np.random.default_rng(4)
    fast = np.array([weighted_currents(x, g, dev, cfg, gen)[0, 0] for _ in range(20_000)])
    t = Tile(config=cfg, device=dev, g=g)
    slow = []
    for _ in range(4_000):
        cyc = [column_currents(t, (x[0] >> n) & 1, "noisy", gen)[0] for n in range(8)]
        slow.append(np.dot(cyc, cfg.cycle_weights))
    assert np.std(fast) == pytest.approx(np.std(slow), rel=0.05)
    assert np.mean(fast) == pytest.approx(np.mean(slow), rel=1e-3)


def test_snapshot_roundtrip(tmp_path, rng):
    g = rng.uniform(10, 70, size=(5, 7))
    save_tile(tmp_path / "t.bin", g)
    np.testing.assert_array_equal(load_tile(tmp_path / "t.bin"), g)
    raw = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-3])
    with pytest.raises(SnapshotError, match="expected"):
        load_tile(tmp_path / "cut.bin")
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SnapshotError, match="magic"):
        load_tile(tmp_path / "bad.bin")
