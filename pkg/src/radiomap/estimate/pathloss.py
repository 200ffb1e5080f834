"""Least-squares fitting of the log-distance path-loss law.

For a fixed transmitter position the model ``P_ref - 10 eta log10(d)`` is
linear in ``(P_ref, eta)``, so the position is searched (coarse grid, then
pattern search) with the linear part solved in closed form at every
candidate.  A final Levenberg-Marquardt style polish on all four parameters
removes the pattern-search quantization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ..field import DB_FLOOR, LINEAR_FLOOR, BandGrid, Grid2D, DB
from .base import EstimationError, FittedEstimator, measurement_arrays

MIN_EXPONENT = 1e-3
COARSE = 20
ILL_CONDITIONED = 1e6
EXPLAINED = 0.0


@dataclass(frozen=True)
class PathLossFit:
    est_position: tuple
    est_ref_power_db: float
    est_exponent: float
    residual_rms: float
    d_min: float = 0.0
    condition: float = 1.0
    ill_conditioned: bool = False
    n_used: int = 0

    def predict_db(self, x, y):
        d = np.hypot(np.asarray(x, dtype=float) - self.est_position[0],
                     np.asarray(y, dtype=float) - self.est_position[1])
        return self.est_ref_power_db - 10.0 * self.est_exponent * np.log10(np.maximum(d, self.d_min))

    def as_dict(self):
        return {
            "position": [float(v) for v in self.est_position],
            "ref_power_db": float(self.est_ref_power_db),
            "exponent": float(self.est_exponent),
            "residual_rms_db": float(self.residual_rms),
            "condition": float(self.condition),
            "ill_conditioned": bool(self.ill_conditioned),
            "n_used": int(self.n_used),
        }


def _log_dist(cand, xy, d_min):
    d = np.hypot(cand[:, None, 0] - xy[None, :, 0], cand[:, None, 1] - xy[None, :, 1])
    return np.log10(np.maximum(d, d_min))


def _linear_fit(u, v):
    """Per-row LS of v on [1, -10 u] with eta >= MIN_EXPONENT; returns (p_ref, eta, sse)."""
    um = u.mean(axis=1, keepdims=True)
    vm = v.mean()
    du = u - um
    suu = np.sum(du * du, axis=1)
    suv = du @ (v - vm)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(suu > 0, suv / suu, 0.0)
    eta = np.maximum(-slope / 10.0, MIN_EXPONENT)
    p_ref = vm + 10.0 * eta * um[:, 0]
    resid = v[None, :] - (p_ref[:, None] - 10.0 * eta[:, None] * u)
    return p_ref, eta, np.sum(resid * resid, axis=1)


def _cost(points, xy, v, d_min):
    return _linear_fit(_log_dist(np.atleast_2d(points), xy, d_min), v)


def _jacobian_condition(pos, p_ref, eta, xy, d_min):
    dx = pos[0] - xy[:, 0]
    dy = pos[1] - xy[:, 1]
    d = np.hypot(dx, dy)
    active = d > d_min
    d2 = np.where(active, d * d, 1.0)
    k = 10.0 * eta / np.log(10.0)
    jac = np.column_stack([
        np.where(active, k * dx / d2, 0.0),
        np.where(active, k * dy / d2, 0.0),
        -np.ones(len(xy)),
        10.0 * np.log10(np.maximum(d, d_min)),
    ])
    norms = np.linalg.norm(jac, axis=0)
    if np.any(norms == 0):
        return np.inf
    s = np.linalg.svd(jac / norms, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def fit_pathloss_arrays(xy, v, bounds, d_min, init_position=None) -> PathLossFit:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    v = np.asarray(v, dtype=float)
    if len(v) < 4:
        raise EstimationError("path-loss fit needs at least 4 measurements")
    x0, y0, x1, y1 = (float(b) for b in bounds)
    lo = np.array([x0, y0])
    hi = np.array([x1, y1])

    gx = x0 + (np.arange(COARSE) + 0.5) * (x1 - x0) / COARSE
    gy = y0 + (np.arange(COARSE) + 0.5) * (y1 - y0) / COARSE
    cand = np.column_stack([np.repeat(gx, COARSE), np.tile(gy, COARSE)])
    if init_position is not None:
        cand = np.vstack([np.clip(np.asarray(init_position, dtype=float), lo, hi), cand])
    sse = _cost(cand, xy, v, d_min)[2]
    best = int(np.argmin(sse))
    pos, best_sse = cand[best].copy(), sse[best]

    moves = np.array([(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)], dtype=float)
    step = max(x1 - x0, y1 - y0) / COARSE
    tol = max(d_min * 2.0, 1e-9) / 10.0
    while step >= tol:
        trial = np.clip(pos + step * moves, lo, hi)
        s = _cost(trial, xy, v, d_min)[2]
        j = int(np.argmin(s))
        if s[j] < best_sse:
            pos, best_sse = trial[j], s[j]
        else:
            step /= 2.0

    p_ref, eta, _ = (a[0] for a in _cost(pos, xy, v, d_min))

    def residuals(theta):
        d = np.hypot(theta[0] - xy[:, 0], theta[1] - xy[:, 1])
        return v - (theta[2] - 10.0 * theta[3] * np.log10(np.maximum(d, d_min)))

    start = np.array([pos[0], pos[1], p_ref, eta])
    lower = np.array([x0, y0, -np.inf, MIN_EXPONENT])
    upper = np.array([x1, y1, np.inf, np.inf])
    start = np.clip(start, lower, np.nextafter(upper, -np.inf))
    try:
        polished = least_squares(residuals, start, bounds=(lower, upper), method="trf",
                                 x_scale=np.array([step * 10 + tol, step * 10 + tol, 1.0, 0.1]),
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if 2.0 * polished.cost < best_sse:
            pos = polished.x[:2]
            p_ref, eta = polished.x[2], polished.x[3]
            best_sse = 2.0 * polished.cost
    except ValueError:
        pass

    cond = _jacobian_condition(pos, p_ref, eta, xy, d_min)
    return PathLossFit(
        est_position=(float(pos[0]), float(pos[1])),
        est_ref_power_db=float(p_ref),
        est_exponent=float(eta),
        residual_rms=float(np.sqrt(best_sse / len(v))),
        d_min=float(d_min),
        condition=cond,
        ill_conditioned=bool(not np.isfinite(cond) or cond > ILL_CONDITIONED),
        n_used=len(v),
    )


def fit_pathloss_single(ms, init_position=None, bounds=None, channel=0, d_min=None) -> PathLossFit:
    """Fit transmitter position, reference power (dB at 1 m) and exponent.

    ``bounds`` defaults to the measurement set's area, ``d_min`` to half its
    cell size and ``init_position`` to the strongest sensor.
    ``ill_conditioned`` flags fits whose parameters are not jointly
    identifiable (e.g. all sensors equidistant from the estimate).
    """
    xy, v = measurement_arrays(ms, channel)
    if init_position is None and len(v):
        init_position = xy[int(np.argmax(v))]
    geometry = getattr(ms, "geometry", None)
    if bounds is None:
        if geometry is None:
            raise EstimationError("bounds required when no geometry is attached")
        bounds = geometry.bounds
    if d_min is None:
        d_min = geometry.cell_size / 2.0 if geometry is not None else 0.5
    return fit_pathloss_arrays(xy, v, bounds, d_min, init_position)


def seed_positions(xy, v, n_tx, bounds):
    """Greedy strongest-first local maxima with suppression radius diameter / (2 sqrt(n_tx))."""
    x0, y0, x1, y1 = bounds
    radius = np.hypot(x1 - x0, y1 - y0) / (2.0 * np.sqrt(n_tx))
    order = np.argsort(-v, kind="stable")
    alive = np.ones(len(v), dtype=bool)
    seeds = []
    for i in order:
        if len(seeds) == n_tx:
            break
        if not alive[i]:
            continue
        seeds.append(i)
        alive &= np.hypot(xy[:, 0] - xy[i, 0], xy[:, 1] - xy[i, 1]) > radius
    for i in order:
        # fallback: fewer maxima than transmitters
        if len(seeds) == n_tx:
            break
        if i not in seeds:
            seeds.append(i)
    return xy[np.array(seeds, dtype=int)]


def voronoi_assign(xy, seeds):
    """Index of the nearest seed for every point; ties go to the lower index."""
    d = np.hypot(xy[:, None, 0] - seeds[None, :, 0], xy[:, None, 1] - seeds[None, :, 1])
    return np.argmin(d, axis=1)


class ModelBased(FittedEstimator):
    """Successive multi-transmitter path-loss fit over Voronoi cells of seed maxima.

    Cells are fitted strongest seed first, each after subtracting the linear
    power of the transmitters already fitted.  ``refine_passes`` backfitting
    sweeps then refit every cell with all other transmitters subtracted, so
    the first fit is no longer biased by its neighbors' power.
    """

    method = "model_based"

    def __init__(self, xy, values, n_tx=1, geometry=None, bounds=None, d_min=None, refine_passes=2):
        super().__init__(xy, values, geometry)
        if n_tx < 1:
            raise EstimationError("n_tx must be >= 1")
        if bounds is None:
            if geometry is None:
                raise EstimationError("model_based needs a geometry or bounds")
            bounds = geometry.bounds
        if d_min is None:
            d_min = geometry.cell_size / 2.0 if geometry is not None else 0.5
        self.n_tx = int(n_tx)
        self.seeds = seed_positions(self.xy, self.values, self.n_tx, bounds)
        self.cells = voronoi_assign(self.xy, self.seeds)
        self.clamped = 0
        fits = {}
        for k in range(self.n_tx):
            fit = self._fit_cell(k, fits, bounds, d_min, self.seeds[k])
            if fit is not None:
                fits[k] = fit
        if not fits:
            raise EstimationError("no Voronoi cell holds the 4 measurements a path-loss fit needs")
        for _ in range(refine_passes if len(fits) > 1 else 0):
            for k in list(fits):
                others = {j: f for j, f in fits.items() if j != k}
                fits[k] = self._fit_cell(k, others, bounds, d_min, fits[k].est_position)
        self.fits = tuple(fits[k] for k in sorted(fits))

    def _fit_cell(self, k, known, bounds, d_min, init):
        """Fit cell k after removing the linear power of the ``known`` fits."""
        members = self.cells == k
        if members.sum() < 4:
            return None
        xy = self.xy[members]
        vals = self.values[members]
        if known:
            other = sum(10.0 ** (f.predict_db(xy[:, 0], xy[:, 1]) / 10.0) for f in known.values())
            measured = 10.0 ** (vals / 10.0)
            residual = measured - other
            vals = np.maximum(10.0 * np.log10(np.maximum(residual, LINEAR_FLOOR)), DB_FLOOR)
            # sensors explained away by the known transmitters carry no information
            # about this one; keep them only if too few others remain
            usable = residual > EXPLAINED * measured
            self.clamped += int(np.sum(~usable))
            if usable.sum() >= 4:
                xy, vals = xy[usable], vals[usable]
        return fit_pathloss_arrays(xy, vals, bounds, d_min, init)

    @property
    def params(self):
        return {"n_tx": self.n_tx}

    def _predict(self, q):
        total = sum(10.0 ** (f.predict_db(q[:, 0], q[:, 1]) / 10.0) for f in self.fits)
        return np.maximum(10.0 * np.log10(np.maximum(total, LINEAR_FLOOR)), DB_FLOOR)


def estimate_model_based_multi(ms, n_tx, channel=0, channel_centers=None, channel_width=1.0,
                               refine_passes=2):
    """Fit ``n_tx`` transmitters and reconstruct the map (dB) on the set's geometry.

    Returns (list of PathLossFit, single-channel BandGrid).
    """
    model = ModelBased(*measurement_arrays(ms, channel), n_tx=n_tx, geometry=ms.geometry,
                       refine_passes=refine_passes)
    xs, ys = ms.geometry.mesh()
    grid = Grid2D(ms.geometry, model.predict(xs, ys), DB)
    centers = (float(channel),) if channel_centers is None else (float(channel_centers[channel]),)
    return list(model.fits), BandGrid((grid,), centers, channel_width)
