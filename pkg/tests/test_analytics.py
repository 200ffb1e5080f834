import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radiomap.analytics import (AnalyticsError, Route, compare_maps, dead_zones, detect_anomaly,
                                integrate_field, local_extrema, locate_rogue, sinr_along_route)
from radiomap.field import LINEAR, Geometry, GeometryMismatch, Grid2D, from_db, to_db
from radiomap.scenario import (Obstacle, PropagationParams, Scenario, Transmitter, channel_gain_map,
                               generate_ground_truth)

from conftest import band

GEOM = Geometry(0.0, 0.0, 50.0, 40, 40)


def scen(txs, obstacles=(), sigma=0.0):
    return Scenario(area=GEOM.bounds, resolution=50.0, transmitters=tuple(txs), obstacles=tuple(obstacles),
                    propagation=PropagationParams(pathloss_exponent=3.0, shadowing_sigma=sigma,
                                                  decorrelation_distance=150.0), rng_seed=5)


# ---- compare_maps ----------------------------------------------------------

def test_compare_examples(rng):
    t = band(GEOM, rng.normal(-80, 5, GEOM.shape))
    r = compare_maps(t, t)
    assert (r.rmse_db, r.mae_db, r.max_abs_db) == (0.0, 0.0, 0.0)
    r = compare_maps(band(GEOM, t[0].values + 3.0), t)
    assert r.rmse_db == pytest.approx(3.0) and r.mae_db == pytest.approx(3.0) and r.max_abs_db == pytest.approx(3.0)
    assert r.n_cells == GEOM.n_rows * GEOM.n_cols


def test_compare_symmetry_and_units(rng):
    a = band(GEOM, rng.normal(-80, 5, GEOM.shape))
    b = band(GEOM, rng.normal(-80, 5, GEOM.shape))
    r1, r2 = compare_maps(a, b), compare_maps(b, a)
    assert (r1.rmse_db, r1.mae_db, r1.max_abs_db) == (r2.rmse_db, r2.mae_db, r2.max_abs_db)
    lin = from_db(b)
    assert compare_maps(a, lin).rmse_db == pytest.approx(r1.rmse_db, rel=1e-12)
    with pytest.raises(GeometryMismatch):
        compare_maps(a, band(Geometry(0.0, 0.0, 50.0, 4, 4), np.zeros((4, 4))))


def test_compare_exclusion(rng):
    t = band(GEOM, np.zeros(GEOM.shape))
    v = np.zeros(GEOM.shape)
    v[10, 10] = 50.0
    e = band(GEOM, v)
    x, y = GEOM.cell_center(10, 10)
    assert compare_maps(e, t).max_abs_db == 50.0
    r = compare_maps(e, t, exclusion_radius_cells=1, tx_positions=[(x, y)])
    assert r.max_abs_db == 0.0 and r.n_cells == GEOM.n_rows * GEOM.n_cols - 5


# ---- integrate_field -------------------------------------------------------

def test_integrate_constant_and_additivity(rng):
    one = band(GEOM, np.ones(GEOM.shape), unit=LINEAR)
    assert integrate_field(one, (0, 0, 500, 250)) == pytest.approx(10 * 5 * GEOM.cell_area)
    field = band(GEOM, rng.uniform(0, 1e-6, GEOM.shape), unit=LINEAR)
    left = integrate_field(field, (0, 0, 700, 2000))
    right = integrate_field(field, (700, 0, 2000, 2000))
    assert left + right == pytest.approx(integrate_field(field), rel=1e-12)
    scaled = band(GEOM, 7.5 * field[0].values, unit=LINEAR)
    assert integrate_field(scaled) == pytest.approx(7.5 * integrate_field(field), rel=1e-12)
    with pytest.raises(AnalyticsError):
        integrate_field(field, (5000, 5000, 6000, 6000))


def test_integrate_superposition():
    txs = [Transmitter("a", (300.0, 400.0)), Transmitter("b", (1500.0, 900.0)), Transmitter("c", (800.0, 1700.0))]
    total = integrate_field(generate_ground_truth(scen(txs, sigma=4.0)))
    parts = sum(integrate_field(generate_ground_truth(scen([t], sigma=4.0))) for t in txs)
    assert total == pytest.approx(parts, rel=1e-12)


# ---- extrema -----------------------------------------------------------------

def test_local_extrema():
    s = scen([Transmitter("a", (725.0, 1125.0))])
    g = to_db(generate_ground_truth(s))[0]
    peaks = local_extrema(g, "max")
    assert [p[0] for p in peaks] == [GEOM.cell_of(725.0, 1125.0)]
    assert local_extrema(Grid2D(GEOM, np.full(GEOM.shape, -3.0)), "max") == []
    assert local_extrema(Grid2D(GEOM, np.full(GEOM.shape, -3.0)), "min") == []
    bumps = np.zeros(GEOM.shape)
    bumps[10, 10], bumps[10, 13], bumps[30, 30] = 5.0, 4.0, 3.0
    assert [p[0] for p in local_extrema(Grid2D(GEOM, bumps), "max", 1)] == [(10, 10), (10, 13), (30, 30)]
    assert [p[0] for p in local_extrema(Grid2D(GEOM, bumps), "max", 5)] == [(10, 10), (30, 30)]
    assert [p[0] for p in local_extrema(Grid2D(GEOM, -bumps), "min", 5)] == [(10, 10), (30, 30)]


# ---- dead zones / SINR -------------------------------------------------------

def _gain_inputs(s):
    gains = {t.id: channel_gain_map(s, t.id) for t in s.transmitters}
    powers = {t.id: t.tx_power for t in s.transmitters}
    return gains, generate_ground_truth(s)[0], powers


def test_noise_only_single_bs():
    s = scen([Transmitter("a", (1000.0, 1000.0))])
    gains, interference, powers = _gain_inputs(s)
    mask, comps, sinr = dead_zones(gains, interference, powers, -130.0, 0.0)
    assert sinr.values.min() > 0.0
    assert mask.values.sum() == 0 and comps == []
    edge = float(sinr.values.min())
    mask, _, _ = dead_zones(gains, interference, powers, -130.0, edge + 1.0)
    assert mask.values.sum() > 0


def test_blocked_cells_are_dead():
    box = [Obstacle((1400.0, 1400.0), (1800.0, 1400.0), 200.0), Obstacle((1800.0, 1400.0), (1800.0, 1800.0), 200.0),
           Obstacle((1800.0, 1800.0), (1400.0, 1800.0), 200.0), Obstacle((1400.0, 1800.0), (1400.0, 1400.0), 200.0)]
    # off the box diagonal: a ray through a shared wall corner only touches, never crosses
    s = scen([Transmitter("a", (310.0, 260.0)), Transmitter("b", (300.0, 1710.0))], obstacles=box)
    gains, interference, powers = _gain_inputs(s)
    mask, comps, _ = dead_zones(gains, interference, powers, -130.0, 0.0)
    r, c = GEOM.cell_of(1600.0, 1600.0)
    assert mask.values[r, c] == 1.0
    assert any(((comp[:, 0] == r) & (comp[:, 1] == c)).any() for comp in comps)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dead_zone_monotonicity(seed):
    r = np.random.default_rng(seed)
    pos = r.uniform(0, 2000, (4, 2))
    txs = [Transmitter(f"t{i}", tuple(p), tx_power=float(r.uniform(0.1, 2))) for i, p in enumerate(pos)]
    walls = [Obstacle(tuple(r.uniform(0, 2000, 2)), tuple(r.uniform(0, 2000, 2)), 15.0) for _ in range(4)]
    s_all = scen(txs, walls, sigma=3.0)
    gains, _, powers = _gain_inputs(s_all)
    # interference held fixed (measured total); adding a server only adds a candidate
    interference = generate_ground_truth(s_all)[0]
    few = {k: gains[k] for k in ("t0", "t1")}
    m_few, _, _ = dead_zones(few, interference, powers, -120.0, 3.0)
    m_all, _, _ = dead_zones(gains, interference, powers, -120.0, 3.0)
    assert np.all(m_all.values <= m_few.values)
    m_hi, _, _ = dead_zones(gains, interference, powers, -120.0, 6.0)
    assert np.all(m_hi.values >= m_all.values)


def test_route_single_point_and_zero_interference():
    s = scen([Transmitter("a", (500.0, 500.0)), Transmitter("b", (1500.0, 1500.0), tx_power=2.0)])
    gains, interference, powers = _gain_inputs(s)
    x, y = GEOM.cell_center(20, 20)
    got = sinr_along_route(Route(((x, y),), ("a",)), gains, interference, powers, -125.0)
    pa = powers["a"] * from_db(gains["a"]).values[20, 20]
    i_tot = interference.values[20, 20]
    want = 10 * math.log10(pa / (max(i_tot - pa, 0.0) + 10 ** -12.5))
    assert got[0] == pytest.approx(want, abs=1e-9)
    _, _, sinr = dead_zones(gains, interference, powers, -125.0, 0.0)
    zero = Grid2D(GEOM, np.zeros(GEOM.shape), LINEAR)
    got = sinr_along_route(Route(((x, y), (900.0, 700.0)), ("b",)), gains, zero, powers, -125.0)
    gb = powers["b"] * from_db(gains["b"]).values[20, 20]
    assert got[0] == pytest.approx(10 * math.log10(gb / 10 ** -12.5), abs=1e-9)
    with pytest.raises(AnalyticsError):
        sinr_along_route(Route(((-10.0, 0.0),), ("a",)), gains, interference, powers, -125.0)
    with pytest.raises(AnalyticsError):
        sinr_along_route(Route(((10.0, 10.0),), ("zz",)), gains, interference, powers, -125.0)


def test_route_dip_behind_wall():
    wall = Obstacle((1000.0, 0.0), (1000.0, 2000.0), 25.0)
    s = scen([Transmitter("a", (225.0, 1025.0)), Transmitter("b", (1775.0, 1775.0), tx_power=0.01)], [wall])
    gains, interference, powers = _gain_inputs(s)
    before, after = (925.0, 1025.0), (1075.0, 1025.0)
    sinr = sinr_along_route(Route((before, after), ("a",)), gains, interference, powers, -130.0)
    g = {k: from_db(v) for k, v in gains.items()}
    i_before = powers["b"] * g["b"].values[GEOM.cell_of(*before)]
    i_after = powers["b"] * g["b"].values[GEOM.cell_of(*after)]
    change = abs(10 * math.log10(i_after / i_before))
    assert sinr[0] - sinr[1] >= 25.0 - change


def test_route_validation():
    with pytest.raises(AnalyticsError):
        Route((), ())
    with pytest.raises(AnalyticsError):
        Route(((0, 0), (1, 1), (2, 2)), ("a", "b", "c", "d"))
    assert Route(((0, 0), (1, 1), (2, 2)), ("a", "b")).server_at(2) == "b"


# ---- anomaly -----------------------------------------------------------------

def _history(r, n=50, base=None, sigma=1.0):
    base = np.full(GEOM.shape, -90.0) if base is None else base
    return [band(GEOM, base + r.normal(0, sigma, GEOM.shape)) for _ in range(n)]


def test_anomaly_no_flags_on_mean(rng):
    hist = _history(rng)
    mean = np.mean([h[0].values for h in hist], axis=0)
    rep = detect_anomaly(hist, band(GEOM, mean), 5.0)
    assert rep.flags.sum() == 0 and rep.clusters == ()
    with pytest.raises(AnalyticsError):
        detect_anomaly(hist[:2], band(GEOM, mean))
    with pytest.raises(AnalyticsError):
        locate_rogue(rep, band(GEOM, mean))


def test_anomaly_offset_invariance(rng):
    hist = _history(rng)
    cur = hist[0][0].values + rng.normal(0, 3, GEOM.shape)
    a = detect_anomaly(hist, band(GEOM, cur), 2.0)
    b = detect_anomaly([band(GEOM, h[0].values + 17.0) for h in hist], band(GEOM, cur + 17.0), 2.0)
    assert np.array_equal(a.flags, b.flags)
    assert np.allclose(a.z, b.z, atol=1e-9)


def test_anomaly_disk_and_rogue(rng):
    hist = _history(rng)
    xs, ys = GEOM.mesh()
    disk = np.hypot(xs - 1325.0, ys - 725.0) <= 150.0
    cur = -90.0 + rng.normal(0, 1, GEOM.shape) + 20.0 * disk
    rep = detect_anomaly(hist, band(GEOM, cur), 5.0)
    assert len(rep.clusters) == 1
    cl = rep.clusters[0]
    covered = np.zeros(GEOM.shape, dtype=bool)
    covered[cl.cells[:, 0], cl.cells[:, 1]] = True
    assert (covered & disk).sum() >= 0.9 * disk.sum()
    est = locate_rogue(rep, band(GEOM, cur), refine=True)
    assert math.hypot(est.position[0] - 1325.0, est.position[1] - 725.0) <= 2 * GEOM.cell_size
    assert est.excess_power > 0 and est.fit is not None
    assert rep.as_dict()["flagged_cells"] == int(rep.flags.sum())


def test_rogue_tie_break():
    hist = [band(GEOM, np.full(GEOM.shape, -90.0)) for _ in range(3)]
    cur = np.full(GEOM.shape, -90.0)
    cur[30:32, 5:7] = -60.0
    cur[5:7, 30:32] = -60.0
    rep = detect_anomaly(hist, band(GEOM, cur), 5.0)
    assert len(rep.clusters) == 2
    est = locate_rogue(rep, band(GEOM, cur))
    assert est.position == pytest.approx((1550.0, 1700.0))
    assert est.cluster_cells == 4
