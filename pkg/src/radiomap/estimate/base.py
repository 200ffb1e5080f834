"""Common pieces of the fit/predict contract."""
import numpy as np


class EstimationError(ValueError):
    """Estimator cannot run on the given data (e.g. no usable measurements)."""


class ConditioningError(ArithmeticError):
    """Linear system is singular or too ill-conditioned to solve reliably."""


COND_LIMIT = 1e12
COINCIDENT = 1e-9
CHUNK = 4096


class FittedEstimator:
    """Immutable fitted model; ``predict`` maps query coordinates to dB."""

    method = "base"

    def __init__(self, xy, values, geometry=None):
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        values = np.asarray(values, dtype=float).reshape(-1)
        if len(values) == 0:
            raise EstimationError(f"{self.method}: no usable measurements")
        if len(xy) != len(values):
            raise EstimationError("positions and values differ in length")
        xy.flags.writeable = False
        values.flags.writeable = False
        self.xy = xy
        self.values = values
        self.geometry = geometry

    @property
    def params(self):
        return {}

    def _predict(self, q):
        raise NotImplementedError

    def predict(self, x, y):
        """Evaluate at query points; scalar in, scalar out."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        q = np.column_stack([np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()])
        out = np.concatenate([self._predict(q[i:i + CHUNK]) for i in range(0, len(q), CHUNK)]) \
            if len(q) else np.empty(0)
        out = out.reshape(shape)
        return float(out) if out.ndim == 0 else out

    def __repr__(self):
        return f"{type(self).__name__}(n={len(self.values)}, {self.params})"


def pairwise_distance(a, b):
    return np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])


def measurement_arrays(ms, channel=0, time_index=None):
    """(xy, values) of unrejected measurements, or pass-through for an (xy, values) tuple."""
    if isinstance(ms, tuple):
        xy, values = ms
        return np.asarray(xy, dtype=float).reshape(-1, 2), np.asarray(values, dtype=float)
    return ms.arrays(channel, time_index)
