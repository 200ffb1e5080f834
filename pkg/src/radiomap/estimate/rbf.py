"""Radial basis function interpolation with optional ridge regularization."""
import numpy as np

from .base import COND_LIMIT, ConditioningError, EstimationError, FittedEstimator, \
    measurement_arrays, pairwise_distance


def gaussian(r):
    return np.exp(-r * r)


def multiquadric(r):
    return np.sqrt(1.0 + r * r)


def thin_plate(r):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r * r * np.log(r)
    return np.where(r > 0, out, 0.0)


KERNELS = {"gaussian": gaussian, "multiquadric": multiquadric, "thin_plate": thin_plate}


class RBF(FittedEstimator):
    """Solve ``(K + ridge I) c = phi`` with ``K_ij = rbf(|x_i - x_j| / shape)``.

    Thin-plate splines always carry an affine polynomial tail (required for
    a well-posed system); other kernels add it only when ``polynomial`` is
    set.  Coordinates are centered on the sensor centroid and scaled by
    ``shape`` before building the polynomial block.
    """

    method = "rbf"

    def __init__(self, xy, values, rbf="thin_plate", shape=1000.0, ridge=0.0,
                 polynomial=None, geometry=None):
        super().__init__(xy, values, geometry)
        if rbf not in KERNELS:
            raise EstimationError(f"unknown rbf kernel {rbf!r}")
        if len(self.values) < 2:
            raise EstimationError("rbf needs at least 2 measurements")
        if not shape > 0 or ridge < 0:
            raise EstimationError("rbf needs shape > 0 and ridge >= 0")
        self.rbf = rbf
        self.shape = float(shape)
        self.ridge = float(ridge)
        self.polynomial = (rbf == "thin_plate") if polynomial is None else bool(polynomial)
        self._center = self.xy.mean(axis=0)
        self._kernel = KERNELS[rbf]

        n = len(self.values)
        k = self._kernel(pairwise_distance(self.xy, self.xy) / self.shape) + self.ridge * np.eye(n)
        if self.polynomial:
            p = self._poly(self.xy)
            m = p.shape[1]
            a = np.block([[k, p], [p.T, np.zeros((m, m))]])
            rhs = np.concatenate([self.values, np.zeros(m)])
        else:
            a, rhs = k, self.values
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise ConditioningError(
                f"rbf system condition number {cond:.3g}; duplicate sensors? retry with ridge > 0")
        sol = np.linalg.solve(a, rhs)
        self.coef = sol[:n]
        self.poly_coef = sol[n:]
        self.condition = float(cond)

    def _poly(self, pts):
        s = (pts - self._center) / self.shape
        return np.column_stack([np.ones(len(pts)), s])

    @property
    def params(self):
        return {"rbf": self.rbf, "shape": self.shape, "ridge": self.ridge, "polynomial": self.polynomial}

    def _predict(self, q):
        out = self._kernel(pairwise_distance(q, self.xy) / self.shape) @ self.coef
        if self.polynomial:
            out = out + self._poly(q) @ self.poly_coef
        return out


def estimate_rbf(ms, x, y, rbf="thin_plate", shape=1000.0, ridge=0.0, channel=0, polynomial=None):
    return RBF(*measurement_arrays(ms, channel), rbf=rbf, shape=shape, ridge=ridge,
               polynomial=polynomial).predict(x, y)
