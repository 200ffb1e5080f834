"""Inverse-distance weighting and its angle-aware variant."""
import numpy as np

from .base import COINCIDENT, EstimationError, FittedEstimator, measurement_arrays, pairwise_distance


class IDW(FittedEstimator):
    method = "idw"

    def __init__(self, xy, values, d_exp=2.0, geometry=None):
        if not d_exp > 0:
            raise EstimationError("d_exp must be > 0")
        super().__init__(xy, values, geometry)
        self.d_exp = float(d_exp)

    @property
    def params(self):
        return {"d_exp": self.d_exp}

    def weights(self, q):
        """Unnormalized weights, shape (n_queries, n_sensors)."""
        d = pairwise_distance(q, self.xy)
        with np.errstate(divide="ignore"):
            return d ** (-self.d_exp), d

    def _predict(self, q):
        w, d = self.weights(q)
        with np.errstate(invalid="ignore"):
            out = (w @ self.values) / w.sum(axis=1)
        hit = d < COINCIDENT
        rows = np.flatnonzero(hit.any(axis=1))
        if len(rows):
            out[rows] = self.values[np.argmax(hit[rows], axis=1)]
        return out


def angular_factors(q, xy):
    """Angular-isolation factor of every sensor as seen from each query.

    Sensors are ordered by bearing around the query (ties by index); a
    sensor's factor is half the angular gap between its two neighbors in
    that ordering, divided by pi.  With at most two sensors all factors are 1.
    """
    n = len(xy)
    if n <= 2:
        return np.ones((len(q), n))
    theta = np.arctan2(xy[None, :, 1] - q[:, None, 1], xy[None, :, 0] - q[:, None, 0])
    order = np.argsort(theta, axis=1, kind="stable")
    ts = np.take_along_axis(theta, order, axis=1)
    prev = np.roll(ts, 1, axis=1)
    prev[:, 0] -= 2.0 * np.pi
    nxt = np.roll(ts, -1, axis=1)
    nxt[:, -1] += 2.0 * np.pi
    factors = np.empty_like(theta)
    np.put_along_axis(factors, order, (nxt - prev) / (2.0 * np.pi), axis=1)
    return factors


class ModifiedIDW(IDW):
    method = "midw"

    def weights(self, q):
        w, d = super().weights(q)
        return w * angular_factors(q, self.xy), d


def estimate_idw(ms, x, y, d_exp=2.0, channel=0):
    return IDW(*measurement_arrays(ms, channel), d_exp=d_exp).predict(x, y)


def estimate_midw(ms, x, y, d_exp=2.0, channel=0):
    return ModifiedIDW(*measurement_arrays(ms, channel), d_exp=d_exp).predict(x, y)
