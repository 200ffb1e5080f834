"""Grid-sweep driver: fit one estimator per channel and evaluate every cell."""
from __future__ import annotations

from ..field import DB, BandGrid, Grid2D
from .base import EstimationError, measurement_arrays
from .idw import IDW, ModifiedIDW
from .kriging import OrdinaryKriging, Variogram, fit_variogram
from .pathloss import ModelBased
from .rbf import RBF

METHODS = ("idw", "midw", "rbf", "kriging", "model_based")


def fit_estimator(ms, config, channel=0, time_index=None):
    """Fit the estimator named by ``config["method"]`` on one channel.

    Recognized keys: ``d_exp`` (idw, midw); ``rbf``, ``shape``, ``ridge``,
    ``polynomial`` (rbf); ``variogram`` as a fitted :class:`Variogram`, a
    dict of ``nugget/sill/range``, or ``n_bins/max_lag`` fit settings
    (kriging); ``n_tx`` (model_based).
    """
    config = dict(config)
    method = config.get("method")
    if method not in METHODS:
        raise EstimationError(f"unknown estimation method {method!r}")
    xy, values = measurement_arrays(ms, channel, time_index)
    geometry = getattr(ms, "geometry", None)
    if len(values) == 0:
        raise EstimationError(f"{method}: no usable measurements on channel {channel}")
    if method == "idw":
        return IDW(xy, values, d_exp=config.get("d_exp", 2.0), geometry=geometry)
    if method == "midw":
        return ModifiedIDW(xy, values, d_exp=config.get("d_exp", 2.0), geometry=geometry)
    if method == "rbf":
        return RBF(xy, values, rbf=config.get("rbf", "thin_plate"), shape=config.get("shape", 1000.0),
                   ridge=config.get("ridge", 0.0), polynomial=config.get("polynomial"), geometry=geometry)
    if method == "kriging":
        v = config.get("variogram")
        if not isinstance(v, Variogram):
            v = dict(v or {})
            if {"nugget", "sill", "range"} <= set(v):
                v = Variogram(nugget=float(v["nugget"]), sill=float(v["sill"]), range=float(v["range"]))
            else:
                v = fit_variogram((xy, values), n_bins=int(v.get("n_bins", 15)), max_lag=v.get("max_lag"))
        return OrdinaryKriging(xy, values, v, geometry=geometry)
    return ModelBased(xy, values, n_tx=int(config.get("n_tx", 1)), geometry=geometry,
                      refine_passes=int(config.get("refine_passes", 2)))


def estimate_map(ms, config, geometry=None, channel_centers=None, channel_width=1.0,
                 time_index=None, return_fits=False):
    """Dense dB map on ``geometry`` (default: the measurement set's) for every channel.

    With ``return_fits`` the fitted estimators are returned alongside, one
    per channel.
    """
    geometry = geometry or ms.geometry
    channels = ms.channels()
    if not channels:
        raise EstimationError("measurement set is empty")
    xs, ys = geometry.mesh()
    grids, fits = [], []
    for k in channels:
        est = fit_estimator(ms, config, channel=k, time_index=time_index)
        fits.append(est)
        grids.append(Grid2D(geometry, est.predict(xs, ys), DB))
    centers = tuple(float(k) for k in channels) if channel_centers is None \
        else tuple(float(channel_centers[k]) for k in channels)
    band = BandGrid(tuple(grids), centers, channel_width)
    return (band, fits) if return_fits else band
