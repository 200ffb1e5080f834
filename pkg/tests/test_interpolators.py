import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radiomap.estimate import (IDW, RBF, ConditioningError, EstimationError, ModifiedIDW, OrdinaryKriging,
                               Variogram, angular_factors, estimate_idw, estimate_kriging, estimate_map,
                               estimate_midw, estimate_rbf, fit_variogram)
from radiomap.field import Geometry

from conftest import make_ms
from oracles import idw_loop, kriging_dense

VG = Variogram(nugget=0.0, sill=16.0, range=800.0)


def random_set(rng, n=30, span=2000.0):
    xy = rng.uniform(0, span, (n, 2))
    return xy, rng.normal(-70, 8, n)


# ---- IDW ------------------------------------------------------------------

def test_idw_examples():
    ms = make_ms([(10.0, 20.0)], [-55.0])
    assert estimate_idw(ms, 900.0, 3.0) == -55.0
    ms2 = make_ms([(0.0, 0.0), (10.0, 0.0)], [-40.0, -60.0])
    for d in (0.5, 1.0, 2.0, 4.0):
        assert estimate_idw(ms2, 5.0, 7.0, d_exp=d) == pytest.approx(-50.0, abs=1e-12)
    assert estimate_idw(ms2, 10.0, 0.0) == -60.0


def test_idw_matches_loop_oracle(rng):
    xy, v = random_set(rng)
    q = rng.uniform(0, 2000, (50, 2))
    got = IDW(xy, v, 2.5).predict(q[:, 0], q[:, 1])
    want = [idw_loop(xy, v, p, 2.5) for p in q]
    assert np.allclose(got, want, rtol=0, atol=1e-10)


def test_midw_examples():
    ang = np.linspace(0, 2 * np.pi, 7, endpoint=False) + 0.3
    xy = np.column_stack([500 + 100 * np.cos(ang), 400 + 100 * np.sin(ang)])
    v = np.arange(7.0) * -3 - 40
    ms = make_ms(xy, v)
    assert estimate_midw(ms, 500.0, 400.0) == pytest.approx(estimate_idw(ms, 500.0, 400.0), abs=1e-9)
    assert estimate_midw(make_ms([(3.0, 4.0)], [-12.0]), 0.0, 0.0) == -12.0


def test_midw_isolated_sensor_weighs_more():
    r = 100.0
    bearings = np.radians([0.0, 10.0, 180.0])
    xy = np.column_stack([r * np.cos(bearings), r * np.sin(bearings)])
    w, _ = ModifiedIDW(xy, [0.0, 0.0, 1.0]).weights(np.zeros((1, 2)))
    assert w[0, 2] > w[0, 0] and w[0, 2] > w[0, 1]
    # factor = (next bearing - previous bearing) / 2 pi
    assert np.allclose(angular_factors(np.zeros((1, 2)), xy)[0], [190 / 360, 180 / 360, 350 / 360])


@pytest.mark.parametrize("cls", [IDW, ModifiedIDW])
def test_convexity(cls, rng):
    xy, v = random_set(rng, 40)
    q = rng.uniform(-500, 2500, (2000, 2))
    out = cls(xy, v, 1.7).predict(q[:, 0], q[:, 1])
    assert out.min() >= v.min() - 1e-12 and out.max() <= v.max() + 1e-12


# ---- RBF ------------------------------------------------------------------

@pytest.mark.parametrize("kind, shape", [("gaussian", 300.0), ("multiquadric", 300.0), ("thin_plate", 1000.0)])
def test_rbf_exact_at_sensors(kind, shape, rng):
    xy, v = random_set(rng, 25)
    est = RBF(xy, v, rbf=kind, shape=shape)
    assert np.max(np.abs(est.predict(xy[:, 0], xy[:, 1]) - v)) < 1e-6


def test_rbf_reproduces_constants(rng):
    for _ in range(10):
        xy, _ = random_set(rng, int(rng.integers(3, 40)))
        est = RBF(xy, np.full(len(xy), -81.5), rbf="thin_plate")
        q = rng.uniform(-1000, 3000, (200, 2))
        assert np.allclose(est.predict(q[:, 0], q[:, 1]), -81.5, atol=1e-8)


def test_rbf_duplicates_raise_conditioning():
    xy = [(0.0, 0.0), (100.0, 0.0), (100.0, 0.0), (0.0, 50.0)]
    with pytest.raises(ConditioningError):
        estimate_rbf(make_ms(xy, [-1.0, -2.0, -3.0, -4.0]), 10.0, 10.0, rbf="gaussian", shape=100.0)
    with pytest.raises(EstimationError):
        RBF([(0.0, 0.0)], [1.0])
    # ridge regularizes
    RBF(xy, [-1.0, -2.0, -3.0, -4.0], rbf="gaussian", shape=100.0, ridge=1e-3)


# ---- Variogram ------------------------------------------------------------

def test_variogram_constant_field(rng):
    xy = rng.uniform(0, 5000, (80, 2))
    v = fit_variogram(make_ms(xy, np.full(80, -60.0)))
    assert v.sill <= 1e-9


def test_variogram_white_noise(rng):
    xy = rng.uniform(0, 5000, (300, 2))
    vals = rng.normal(-60, 3, 300)
    v = fit_variogram(make_ms(xy, vals))
    assert v.range <= v.bin_lags[0] + 1e-9
    assert abs(v.nugget / np.var(vals, ddof=1) - 1) < 0.2


def test_variogram_model_shape():
    v = Variogram(nugget=1.0, sill=5.0, range=300.0)
    assert v(0.0) == 0.0
    assert v(300.0) == pytest.approx(1 + 4 * (1 - math.exp(-3)))
    assert v(1e9) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        Variogram(nugget=2.0, sill=1.0, range=1.0)
    with pytest.raises(EstimationError):
        fit_variogram(make_ms(np.arange(18.0).reshape(9, 2), np.zeros(9)))


# ---- Kriging --------------------------------------------------------------

def test_kriging_weights_vs_dense_oracle(rng):
    vg = Variogram(nugget=0.5, sill=9.0, range=600.0)
    xy, v = random_set(rng, 35)
    ok = OrdinaryKriging(xy, v, vg)
    for q in rng.uniform(0, 2000, (10, 2)):
        w, mu = ok.weights(*q)
        a, b, sol = kriging_dense(xy, q, 0.5, 9.0, 600.0)
        assert abs(w.sum() - 1) < 1e-10
        assert np.max(np.abs(a @ np.append(w, mu) - b)) < 1e-8
        assert np.allclose(w, sol[:-1], atol=1e-9)


def test_kriging_exact_at_sensors(rng):
    xy, v = random_set(rng, 30)
    mean, var = estimate_kriging(make_ms(xy, v), xy[:, 0], xy[:, 1], VG)
    assert np.max(np.abs(mean - v)) < 1e-6
    assert np.max(var) <= 1e-9


def test_kriging_map_equals_pointwise(rng):
    geom = Geometry(0.0, 0.0, 100.0, 12, 15)
    xy, v = random_set(rng, 20, span=1200.0)
    ms = make_ms(xy, v, geometry=geom)
    m = estimate_map(ms, {"method": "kriging", "variogram": VG})
    xs, ys = geom.mesh()
    mean, _ = estimate_kriging(ms, xs, ys, VG)
    assert np.array_equal(m[0].values, mean)


def test_kriging_local_neighbourhood(rng):
    xy = rng.uniform(0, 20000, (1100, 2))
    v = rng.normal(-70, 5, 1100)
    ok = OrdinaryKriging(xy, v, VG)
    assert ok.local
    out = ok.predict(xy[:5, 0], xy[:5, 1])
    assert np.allclose(out, v[:5], atol=1e-6)


def test_kriging_duplicate_sensors():
    with pytest.raises(ConditioningError):
        OrdinaryKriging([(0.0, 0.0), (0.0, 0.0), (5.0, 5.0)], [1.0, 2.0, 3.0], VG)


# ---- shared properties ----------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5e4, 5e4), st.floats(-5e4, 5e4))
def test_shift_invariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    xy, v = random_set(rng, 15)
    q = rng.uniform(0, 2000, (20, 2))
    shift = np.array([dx, dy])
    for make in (lambda p: IDW(p, v, 2.0), lambda p: ModifiedIDW(p, v, 2.0),
                 lambda p: RBF(p, v, "thin_plate"), lambda p: RBF(p, v, "gaussian", shape=500.0),
                 lambda p: OrdinaryKriging(p, v, VG)):
        a = make(xy).predict(q[:, 0], q[:, 1])
        b = make(xy + shift).predict(q[:, 0] + dx, q[:, 1] + dy)
        assert np.max(np.abs(a - b)) < 1e-9


def test_estimate_map_single_measurement():
    geom = Geometry(0.0, 0.0, 10.0, 4, 5)
    m = estimate_map(make_ms([(12.0, 7.0)], [-33.0], geometry=geom), {"method": "idw"})
    assert np.all(m[0].values == -33.0)
    with pytest.raises(EstimationError):
        estimate_map(make_ms([(12.0, 7.0)], [-33.0], geometry=geom), {"method": "nearest"})
