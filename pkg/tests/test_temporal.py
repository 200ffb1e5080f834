import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radiomap.estimate import estimate_map
from radiomap.field import DB, BandGrid, Geometry, GeometryMismatch, Grid2D
from radiomap.scenario import PropagationParams, Scenario, Transmitter, generate_ground_truth
from radiomap.sensing import place_sensors, synthesize_measurements
from radiomap.temporal import (MapSeries, TemporalError, dequantize_tiles, encode_tile, incremental_update,
                               interpolate_time, quantize_tiles, read_tile_store, storage_size_bits,
                               tile_from_bytes, tile_to_bytes, window_update, write_tile_store)

from conftest import band
from oracles import storage_bits_reference

GEOM = Geometry(0.0, 0.0, 50.0, 40, 40)
IDW = {"method": "idw", "d_exp": 2.0}


def truth_for(tx_pos=(700.0, 1300.0)):
    s = Scenario(area=GEOM.bounds, resolution=50.0, transmitters=(Transmitter("a", tx_pos),),
                 propagation=PropagationParams(pathloss_exponent=3.0, shadowing_sigma=2.0,
                                               decorrelation_distance=200.0), rng_seed=1)
    return generate_ground_truth(s)


SENSORS = place_sensors(GEOM, 80, "uniform_random", seed=0)


def epoch(truth, t, sigma=2.0, seed=0):
    return synthesize_measurements(truth, SENSORS, sigma, seed=seed, time_index=t)


# ---- window -----------------------------------------------------------------

def test_window_length_one_equals_single_estimate():
    truth = truth_for()
    ms = epoch(truth, 3)
    series = window_update(MapSeries(GEOM, 1), ms, IDW)
    assert series.archive[3] == estimate_map(ms, IDW, geometry=GEOM)


def test_window_eviction_and_monotonic_time():
    truth = truth_for()
    series = MapSeries(GEOM, 2)
    for t in (1, 2, 3):
        window_update(series, epoch(truth, t), IDW)
    assert [e.time_index for e in series.window] == [2, 3]
    assert series.times == [1, 2, 3]
    first = series.archive[1]
    assert series.archive[1] is first
    with pytest.raises(TemporalError):
        window_update(series, epoch(truth, 3), IDW)


def test_window_reduces_error():
    truth = truth_for()
    tdb = 10 * np.log10(truth[0].values)
    wins = []
    for seed in range(10):
        rmse = {}
        for L in (1, 5):
            series = MapSeries(GEOM, L)
            for t in range(5):
                window_update(series, epoch(truth, t, 3.0, seed), IDW)
            rmse[L] = np.sqrt(np.mean((series.archive[4][0].values - tdb) ** 2))
        wins.append(rmse[5] - rmse[1])
    assert np.median(wins) <= 0


# ---- time interpolation ------------------------------------------------------

def _series_with(maps):
    s = MapSeries(GEOM, 1)
    for t, m in maps.items():
        s.commit(t, m)
    return s


def test_interpolate_time_examples(rng):
    a = band(GEOM, rng.normal(-80, 5, GEOM.shape))
    b = band(GEOM, rng.normal(-80, 5, GEOM.shape))
    s = _series_with({0: a, 4: b})
    assert interpolate_time(s, 0) == a and interpolate_time(s, 4) == b
    mid = interpolate_time(s, 2)
    assert np.allclose(mid[0].values, 0.5 * (a[0].values + b[0].values), atol=1e-12)
    with pytest.raises(TemporalError):
        interpolate_time(s, 5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.floats(0.01, 0.99))
def test_interpolate_time_convex(seed, gap, frac):
    r = np.random.default_rng(seed)
    a = band(GEOM, r.normal(-80, 5, GEOM.shape))
    b = band(GEOM, r.normal(-80, 5, GEOM.shape))
    s = _series_with({10: a, 10 + gap: b})
    out = interpolate_time(s, 10 + frac * gap)[0].values
    lo = np.minimum(a[0].values, b[0].values)
    hi = np.maximum(a[0].values, b[0].values)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)
    # weights sum to one: constant maps stay constant
    c = _series_with({10: band(GEOM, np.full(GEOM.shape, -7.0)), 10 + gap: band(GEOM, np.full(GEOM.shape, -7.0))})
    assert np.allclose(interpolate_time(c, 10 + frac * gap)[0].values, -7.0, atol=1e-12)


# ---- tiles ---------------------------------------------------------------------

def test_constant_tile_exact():
    t = encode_tile(np.full((16, 16), -93.125), 8)
    assert np.all(t.decode() == -93.125)


def test_tile_error_bound_8bit(rng):
    v = rng.uniform(-150, -30, (16, 16))
    v[0, 0], v[0, 1] = -150.0, -30.0
    t = encode_tile(v, 8)
    assert np.max(np.abs(t.decode() - v)) <= 0.46875
    assert np.max(np.abs(t.decode() - v)) <= 120 / 255 / 2 + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2**32 - 1), st.floats(0.0, 300.0))
def test_tile_roundtrip_bound_and_idempotence(n_bits, seed, span):
    r = np.random.default_rng(seed)
    v = -150 + span * r.uniform(0, 1, (9, 13))
    t = encode_tile(v, n_bits)
    d = t.decode()
    step = (v.max() - v.min()) / (2 ** n_bits - 1) if v.max() > v.min() else 0.0
    assert np.max(np.abs(d - v)) <= step / 2 + 1e-9 * max(span, 1)
    again = encode_tile(d, n_bits)
    assert np.array_equal(again.decode(), d)
    assert tile_from_bytes(tile_to_bytes(t)) == t


def test_quantize_dequantize_band(rng):
    b = band(GEOM, rng.normal(-90, 10, GEOM.shape), rng.normal(-70, 3, GEOM.shape))
    tiles = quantize_tiles(b, 8, 16)
    assert len(tiles) == 2 * 3 * 3
    back = dequantize_tiles(tiles, GEOM, b.channel_centers, 1.0, 16)
    for k in range(2):
        lo, hi = b[k].values.min(), b[k].values.max()
        assert np.max(np.abs(back[k].values - b[k].values)) <= (hi - lo) / 255 / 2 + 1e-9
    again = dequantize_tiles(quantize_tiles(back, 8, 16), GEOM, b.channel_centers, 1.0, 16)
    assert again == back
    with pytest.raises(TemporalError):
        quantize_tiles(b, 8, 4)
    with pytest.raises(TemporalError):
        quantize_tiles(b, 17, 16)


def test_tile_bytes_layout():
    t = encode_tile(np.array([[0.0, 1.0], [2.0, 3.0]]), 2)
    data = tile_to_bytes(t)
    assert data[:4] == b"RMKT" and len(data) == 32 + 1
    assert data[32] == 0b11100100


def test_tile_store_roundtrip(tmp_path, rng):
    b = band(GEOM, rng.normal(-90, 10, GEOM.shape))
    tiles = quantize_tiles(b, 6, 16, epoch=3)
    write_tile_store(tiles, tmp_path)
    back = read_tile_store(tmp_path)
    assert back == sorted(tiles, key=lambda t: t.key)
    assert [t.key for t in back] == sorted(t.key for t in tiles)


# ---- incremental updates ---------------------------------------------------

def test_incremental_identical_and_single_cell(rng):
    b = band(GEOM, rng.normal(-90, 10, GEOM.shape))
    s = MapSeries(GEOM, 1, tile_size=16)
    first, frac = incremental_update(s, b, 1.0, epoch=0)
    assert frac == 1.0 and len(first) == 9
    assert incremental_update(s, b, 1.0, epoch=1) == ([], 0.0)
    v = b[0].values.copy()
    v[20, 35] += 10.0
    upd, frac = incremental_update(s, band(GEOM, v), 1.0, epoch=2)
    assert [(t.row, t.col) for t in upd] == [(1, 2)]
    assert frac == pytest.approx(1 / 9)
    with pytest.raises(GeometryMismatch):
        incremental_update(s, band(Geometry(0.0, 0.0, 50.0, 8, 8), np.zeros((8, 8))))


def test_full_update_equals_quantize(rng):
    a = band(GEOM, rng.normal(-90, 10, GEOM.shape))
    b = band(GEOM, a[0].values + 5.0 + rng.uniform(0, 1, GEOM.shape))
    s = MapSeries(GEOM, 1, tile_size=16)
    incremental_update(s, a, 1.0, epoch=0)
    upd, frac = incremental_update(s, b, 1.0, epoch=1)
    assert frac == 1.0
    assert upd == quantize_tiles(b, 8, 16, epoch=1)
    assert dequantize_tiles(s.latest_tiles(), GEOM, tile_size=16) == dequantize_tiles(upd, GEOM, tile_size=16)


def test_moving_transmitter_updates_some_tiles():
    s = MapSeries(GEOM, 1, tile_size=8)
    before = BandGrid((Grid2D(GEOM, 10 * np.log10(truth_for((700.0, 1300.0))[0].values), DB),), (0.0,), 1.0)
    after = BandGrid((Grid2D(GEOM, 10 * np.log10(truth_for((900.0, 1300.0))[0].values), DB),), (0.0,), 1.0)
    incremental_update(s, before, 1.0, epoch=0)
    upd, frac = incremental_update(s, after, 1.0, epoch=1)
    assert 0 < frac < 1
    keys = {(t.row, t.col) for t in upd}
    for x in (700.0, 900.0):
        r, c = GEOM.cell_of(x, 1300.0)
        assert (r // 8, c // 8) in keys


def test_concurrent_readers_see_consistent_snapshots(rng):
    s = MapSeries(GEOM, 1)
    maps = [band(GEOM, np.full(GEOM.shape, float(-k))) for k in range(20)]
    seen = []

    def reader():
        for _ in range(200):
            for m in s.estimates():
                vals = m[0].values
                seen.append(vals.min() == vals.max())

    th = threading.Thread(target=reader)
    th.start()
    for k, m in enumerate(maps):
        s.commit(k, m)
    th.join()
    assert all(seen)


# ---- storage -----------------------------------------------------------------

def test_storage_examples():
    assert storage_size_bits(400, 20, 120, 3, 24, 10, 8) == 46_080_000_000 == storage_bits_reference()
    assert storage_size_bits((0.001, 0.001), 1, 1, 1, 1, 60, 8) == 8
    assert storage_size_bits(400, 40, 120, 3, 24, 10, 8) * 4 == storage_size_bits(400, 20, 120, 3, 24, 10, 8)
    assert storage_size_bits((1.0, 1.0), 300, 10, 3, 1, 7, 1) == 4 * 4 * 4 * 9
    with pytest.raises(ValueError):
        storage_size_bits(0, 20, 120, 3, 24, 10)
