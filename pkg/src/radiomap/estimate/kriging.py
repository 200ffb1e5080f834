"""Empirical variogram fitting and ordinary Kriging."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import minimize_scalar, nnls
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .base import COND_LIMIT, ConditioningError, EstimationError, FittedEstimator, \
    measurement_arrays, pairwise_distance

MIN_SILL = 1e-12
GLOBAL_LIMIT = 1000
LOCAL_NEIGHBORS = 64


@dataclass(frozen=True)
class Variogram:
    """Exponential model ``nugget + (sill - nugget)(1 - exp(-3h / range))``, zero at h = 0."""

    nugget: float
    sill: float
    range: float
    model: str = "exponential"
    bin_lags: tuple = ()
    bin_semivariance: tuple = ()
    bin_counts: tuple = ()

    def __post_init__(self):
        if self.model != "exponential":
            raise ValueError(f"unsupported variogram model {self.model!r}")
        if not (0 <= self.nugget <= self.sill and self.sill > 0 and self.range > 0):
            raise ValueError(f"invalid variogram parameters {self.nugget}, {self.sill}, {self.range}")

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        g = self.nugget + (self.sill - self.nugget) * (1.0 - np.exp(-3.0 * h / self.range))
        return np.where(h > 0, g, 0.0)

    def as_dict(self):
        return {
            "model": self.model,
            "nugget": float(self.nugget),
            "sill": float(self.sill),
            "range": float(self.range),
            "bins": [{"lag": float(l), "semivariance": float(s), "count": int(c)}
                     for l, s, c in zip(self.bin_lags, self.bin_semivariance, self.bin_counts)],
        }


def empirical_variogram(xy, values, n_bins, max_lag):
    """Binned semivariance: mean of half squared differences per equal-width lag bin.

    Returns (lags, semivariance, counts) for non-empty bins; ``lags`` are the
    mean pair separations inside each bin.
    """
    h = pdist(xy)
    g = 0.5 * pdist(values[:, None], "sqeuclidean")
    keep = (h > 0) & (h <= max_lag)
    h, g = h[keep], g[keep]
    edges = np.linspace(0.0, max_lag, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, h, side="left") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sum_h = np.bincount(idx, weights=h, minlength=n_bins)
    sum_g = np.bincount(idx, weights=g, minlength=n_bins)
    nz = counts > 0
    return sum_h[nz] / counts[nz], sum_g[nz] / counts[nz], counts[nz]


def _nnls_for_range(lags, gamma, sw, rng):
    a = np.column_stack([np.ones_like(lags), 1.0 - np.exp(-3.0 * lags / rng)])
    coef, res = nnls(a * sw[:, None], gamma * sw)
    return coef, res * res


def fit_variogram(ms, n_bins=15, max_lag=None, channel=0, time_index=None) -> Variogram:
    """Count-weighted least-squares fit of the exponential model to binned semivariances.

    For a fixed range the model is linear in (nugget, partial sill), solved by
    non-negative least squares; the range is found by a log-spaced scan
    followed by bounded refinement.  When the spatial term does not improve
    the fit significantly (F-test at 5%) or behaves as a constant over all
    bins, it is folded into the nugget (pure-nugget model).
    """
    xy, values = measurement_arrays(ms, channel, time_index)
    if len(values) < 10:
        raise EstimationError("variogram fit needs at least 10 measurements")
    if n_bins < 4:
        raise EstimationError("variogram fit needs n_bins >= 4")
    if max_lag is None:
        max_lag = 0.5 * float(np.max(pdist(xy)))
    lags, gamma, counts = empirical_variogram(xy, values, n_bins, max_lag)
    if len(lags) == 0:
        raise EstimationError("no measurement pairs within max_lag")
    sw = np.sqrt(counts.astype(float))
    h_first = float(lags[0])

    total_ss = float(np.sum(counts * gamma * gamma))
    nugget0 = float(np.sum(counts * gamma) / np.sum(counts))
    ss0 = float(np.sum(counts * (gamma - nugget0) ** 2))

    candidates = np.geomspace(h_first * 1e-2, max_lag * 10.0, 160)
    scores = [_nnls_for_range(lags, gamma, sw, r)[1] for r in candidates]
    i = int(np.argmin(scores))
    lo = np.log(candidates[max(i - 1, 0)])
    hi = np.log(candidates[min(i + 1, len(candidates) - 1)])
    best_log = np.log(candidates[i])
    if hi > lo:
        opt = minimize_scalar(lambda t: _nnls_for_range(lags, gamma, sw, np.exp(t))[1],
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
        if opt.fun <= scores[i]:
            best_log = opt.x
    rng = float(np.exp(best_log))
    (nugget, psill), ss1 = _nnls_for_range(lags, gamma, sw, rng)

    pure_nugget = total_ss <= 0 or (1.0 - np.exp(-3.0 * h_first / rng)) > 0.99
    dof = len(lags) - 3
    if not pure_nugget and dof > 0 and ss0 > 0:
        f_stat = ((ss0 - ss1) / 2.0) / max(ss1 / dof, 1e-300)
        pure_nugget = f_stat < stats.f.ppf(0.95, 2, dof)
    if pure_nugget:
        nugget, psill = nugget0, 0.0
        rng = min(rng, h_first)
    sill = max(nugget + psill, MIN_SILL)
    nugget = min(max(nugget, 0.0), sill)
    return Variogram(nugget=float(nugget), sill=float(sill), range=float(rng),
                     bin_lags=tuple(lags), bin_semivariance=tuple(gamma),
                     bin_counts=tuple(int(c) for c in counts))


def kriging_matrix(xy, variogram: Variogram):
    """Ordinary Kriging system matrix [[Gamma, 1], [1^T, 0]]."""
    n = len(xy)
    a = np.ones((n + 1, n + 1))
    a[:n, :n] = variogram(pairwise_distance(xy, xy))
    a[n, n] = 0.0
    return a


class OrdinaryKriging(FittedEstimator):
    """Ordinary Kriging with a global neighborhood up to 1000 sensors, else 64 nearest.

    The semivariances are divided by the sill before solving; the weights
    are invariant to that scaling and the variance is scaled back.
    """

    method = "kriging"

    def __init__(self, xy, values, variogram: Variogram, geometry=None):
        super().__init__(xy, values, geometry)
        if len(self.values) < 2:
            raise EstimationError("kriging needs at least 2 measurements")
        self.variogram = variogram
        self._scale = variogram.sill
        self.local = len(self.values) > GLOBAL_LIMIT
        if self.local:
            self._tree = cKDTree(self.xy)
        else:
            a = kriging_matrix(self.xy, variogram)
            a[:-1, :-1] /= self._scale
            self._check(a)
            self._lu = lu_factor(a)

    @staticmethod
    def _check(a):
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise ConditioningError(f"kriging system condition number {cond:.3g}; duplicate sensors?")

    @property
    def params(self):
        return {"nugget": self.variogram.nugget, "sill": self.variogram.sill, "range": self.variogram.range}

    def _rhs(self, q, xy):
        b = np.ones((len(xy) + 1, len(q)))
        b[:-1] = self.variogram(pairwise_distance(xy, q)) / self._scale
        return b

    def weights(self, x, y):
        """(weights, lagrange multiplier) for one query point, global neighborhood."""
        if self.local:
            raise EstimationError("weights() is only exposed for global kriging")
        sol = lu_solve(self._lu, self._rhs(np.array([[x, y]], dtype=float), self.xy))[:, 0]
        return sol[:-1], sol[-1] * self._scale

    def predict_with_variance(self, x, y):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        q = np.column_stack([x.ravel(), y.ravel()])
        mean = np.empty(len(q))
        var = np.empty(len(q))
        if not self.local:
            for i in range(0, len(q), 4096):
                b = self._rhs(q[i:i + 4096], self.xy)
                sol = lu_solve(self._lu, b)
                mean[i:i + 4096] = self.values @ sol[:-1]
                var[i:i + 4096] = self._scale * (np.sum(sol[:-1] * b[:-1], axis=0) + sol[-1])
        else:
            _, nbrs = self._tree.query(q, k=LOCAL_NEIGHBORS)
            for i, idx in enumerate(nbrs):
                idx = np.sort(idx)
                a = kriging_matrix(self.xy[idx], self.variogram)
                a[:-1, :-1] /= self._scale
                b = self._rhs(q[i:i + 1], self.xy[idx])
                sol = np.linalg.solve(a, b)[:, 0]
                mean[i] = self.values[idx] @ sol[:-1]
                var[i] = self._scale * (sol[:-1] @ b[:-1, 0] + sol[-1])
        return mean.reshape(x.shape), var.reshape(x.shape)

    def _predict(self, q):
        return self.predict_with_variance(q[:, 0], q[:, 1])[0]


def estimate_kriging(ms, x, y, variogram: Variogram, channel=0):
    """Ordinary Kriging (mean dB, variance dB^2) at the query points."""
    mean, var = OrdinaryKriging(*measurement_arrays(ms, channel), variogram).predict_with_variance(x, y)
    if mean.size == 1:
        return float(mean[0]), float(var[0])
    return mean, var
