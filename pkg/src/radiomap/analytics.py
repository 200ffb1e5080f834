"""Map evaluation and radio-map-driven applications."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .estimate.pathloss import fit_pathloss_arrays
from .field import DB, LINEAR_FLOOR, BandGrid, Grid2D, GeometryMismatch, as_db, as_linear, \
    central_gradient, from_db, sample_bilinear, to_db

STD_FLOOR_DB = 0.5
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class AnalyticsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ErrorReport:
    rmse_db: float
    mae_db: float
    max_abs_db: float
    errors: BandGrid
    mask: np.ndarray = None
    n_cells: int = 0

    def as_dict(self):
        return {"rmse_db": self.rmse_db, "mae_db": self.mae_db, "max_abs_db": self.max_abs_db,
                "n_cells": self.n_cells}


def _as_band(m):
    return m if isinstance(m, BandGrid) else BandGrid((m,), (0.0,), 1.0)


def exclusion_mask(geometry, positions, radius_cells):
    """True for cells within ``radius_cells`` cell widths of any position."""
    xs, ys = geometry.mesh()
    mask = np.zeros(geometry.shape, dtype=bool)
    for px, py in positions:
        mask |= np.hypot(xs - px, ys - py) <= radius_cells * geometry.cell_size
    return mask


def compare_maps(estimate, truth, exclusion_radius_cells=0, tx_positions=()) -> ErrorReport:
    """dB-domain error statistics of ``estimate - truth`` over all channels.

    Cells within ``exclusion_radius_cells`` of any ``tx_positions`` entry
    are left out of the statistics (they still appear in the error grids).
    """
    est = as_db(_as_band(estimate))
    tru = as_db(_as_band(truth))
    est.geometry.check_same(tru.geometry)
    if est.n_channels != tru.n_channels:
        raise GeometryMismatch("channel count differs")
    err = est.stack() - tru.stack()
    keep = np.ones(est.geometry.shape, dtype=bool)
    if exclusion_radius_cells > 0 and len(tx_positions):
        keep = ~exclusion_mask(est.geometry, tx_positions, exclusion_radius_cells)
    e = err[:, keep]
    if e.size == 0:
        raise AnalyticsError("every cell is excluded")
    errors = BandGrid(tuple(Grid2D(est.geometry, v, DB) for v in err), tru.channel_centers, tru.channel_width)
    return ErrorReport(
        rmse_db=float(np.sqrt(np.mean(e * e))),
        mae_db=float(np.mean(np.abs(e))),
        max_abs_db=float(np.max(np.abs(e))),
        errors=errors,
        mask=keep,
        n_cells=int(e.size),
    )


def region_mask(geometry, region):
    """Boolean cell mask for a region given as a bool array or a half-open
    box ``(x_min, y_min, x_max, y_max)`` tested against cell centers."""
    if region is None:
        return np.ones(geometry.shape, dtype=bool)
    r = np.asarray(region)
    if r.shape == geometry.shape and r.dtype == bool:
        return r
    x0, y0, x1, y1 = (float(v) for v in region)
    xs, ys = geometry.mesh()
    return (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)


def integrate_field(band, region=None, channels=None):
    """Riemann sum of linear power times cell area (W m^2) over region and channels.

    The result is a power-area proxy for aggregate traffic load; multiply by
    channel width for a PSD-over-frequency reading.
    """
    band = as_linear(_as_band(band))
    mask = region_mask(band.geometry, region)
    if not mask.any():
        raise AnalyticsError("region does not intersect the grid")
    chans = range(band.n_channels) if channels is None else channels
    total = 0.0
    for k in chans:
        total += float(np.sum(band[k].values[mask])) * band.geometry.cell_area
    return total


def local_extrema(g: Grid2D, kind="max", min_separation_cells=1):
    """Cells strictly above (below) all existing 8-neighbors, greedily thinned.

    Returns a list of ((row, col), value), strongest first.
    """
    v = g.values
    if min(v.shape) < 3:
        raise AnalyticsError("local_extrema needs at least 3x3 cells")
    sign = 1.0 if kind == "max" else -1.0
    if kind not in ("max", "min"):
        raise AnalyticsError(f"kind must be 'max' or 'min', got {kind!r}")
    s = sign * v
    padded = np.pad(s, 1, constant_values=-np.inf)
    dominant = np.ones(v.shape, dtype=bool)
    rows, cols = v.shape
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            dominant &= s > padded[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
    cand = np.argwhere(dominant)
    order = np.argsort(-s[dominant], kind="stable")
    kept = []
    for r, c in cand[order]:
        if all(max(abs(r - kr), abs(c - kc)) > min_separation_cells for (kr, kc), _ in kept):
            kept.append(((int(r), int(c)), float(v[r, c])))
    return kept


gradient = central_gradient


def _stack_gains(gain_maps, tx_powers):
    ids = list(gain_maps)
    g0 = gain_maps[ids[0]].geometry
    for i in ids[1:]:
        g0.check_same(gain_maps[i].geometry)
    recv = np.stack([tx_powers[i] * as_linear(gain_maps[i]).values for i in ids])
    return ids, g0, recv


def best_server_sinr(received, interference, noise_w):
    """Per-server SINR (linear): P g / (max(I - P g, 0) + N)."""
    own_removed = np.maximum(interference[None] - received, 0.0)
    return received / (own_removed + noise_w)


def dead_zones(gain_maps, interference, tx_powers, noise_dbw, sinr_threshold_db):
    """Cells whose best-server SINR is below the threshold.

    ``gain_maps`` and ``tx_powers`` are dicts keyed by transmitter id;
    ``interference`` is the total received power map (the radio map).
    Returns (dead mask Grid2D of 0/1, list of 4-connected components as
    arrays of (row, col), best SINR Grid2D in dB).
    """
    ids, geom, recv = _stack_gains(gain_maps, tx_powers)
    interference = as_linear(interference)
    geom.check_same(interference.geometry)
    sinr = best_server_sinr(recv, interference.values, 10.0 ** (noise_dbw / 10.0)).max(axis=0)
    sinr_db = to_db(np.maximum(sinr, LINEAR_FLOOR))
    dead = sinr_db < sinr_threshold_db
    labels, n = ndimage.label(dead, structure=FOUR_CONNECTED)
    components = [np.argwhere(labels == i + 1) for i in range(n)]
    return Grid2D(geom, dead.astype(float), DB), components, Grid2D(geom, sinr_db, DB)


@dataclass(frozen=True)
class Route:
    waypoints: tuple
    serving: tuple

    def __post_init__(self):
        wp = tuple((float(x), float(y)) for x, y in self.waypoints)
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "serving", tuple(str(s) for s in self.serving))
        if not wp:
            raise AnalyticsError("route needs at least one waypoint")
        if len(self.serving) not in (max(len(wp) - 1, 1), len(wp)):
            raise AnalyticsError("need one serving id per segment (or per waypoint)")

    def server_at(self, i):
        return self.serving[min(i, len(self.serving) - 1)]


def sinr_along_route(route: Route, gain_maps, interference, tx_powers, noise_dbw):
    """SINR in dB at each waypoint for its assigned server (bilinear sampling).

    Waypoint i uses the server of segment i; the last waypoint keeps the
    last segment's server.
    """
    interference = as_linear(interference)
    noise_w = 10.0 ** (noise_dbw / 10.0)
    out = []
    for i, (x, y) in enumerate(route.waypoints):
        sid = route.server_at(i)
        if sid not in gain_maps:
            raise AnalyticsError(f"unknown serving transmitter {sid!r}")
        try:
            g_db = sample_bilinear(as_db(gain_maps[sid]), x, y)
            i_w = sample_bilinear(interference, x, y)
        except IndexError:
            raise AnalyticsError(f"waypoint {i} ({x}, {y}) outside the map") from None
        s = tx_powers[sid] * 10.0 ** (g_db / 10.0)
        out.append(float(to_db(s / (max(i_w - s, 0.0) + noise_w))))
    return np.array(out)


@dataclass(frozen=True)
class Cluster:
    channel: int
    cells: np.ndarray
    centroid: tuple
    mean_deviation_db: float

    @property
    def size(self):
        return len(self.cells)


@dataclass(frozen=True, eq=False)
class AnomalyReport:
    flags: np.ndarray
    z: np.ndarray
    clusters: tuple
    baseline_db: BandGrid
    k_sigma: float = 5.0

    def as_dict(self):
        return {
            "k_sigma": float(self.k_sigma),
            "flagged_cells": int(self.flags.sum()),
            "clusters": [{"channel": c.channel, "cells": int(c.size),
                          "centroid": [float(v) for v in c.centroid],
                          "mean_deviation_db": float(c.mean_deviation_db)} for c in self.clusters],
        }


def _history_maps(history):
    maps = history.estimates() if hasattr(history, "estimates") else list(history)
    return [as_db(m) for m in maps]


def detect_anomaly(history, current: BandGrid, k_sigma=5.0) -> AnomalyReport:
    """Per-cell z-test of ``current`` against the archived maps (dB).

    ``history`` is a MapSeries or a sequence of BandGrids with at least 3
    entries.  The per-cell std is floored at 0.5 dB.  Flags are grouped
    into 4-connected clusters per channel, ordered by channel then first
    cell in row-major order.
    """
    maps = _history_maps(history)
    if len(maps) < 3:
        raise AnalyticsError("anomaly detection needs at least 3 historical epochs")
    current = as_db(_as_band(current))
    for m in maps:
        current.geometry.check_same(m.geometry)
    stack = np.stack([m.stack() for m in maps])
    mean = stack.mean(axis=0)
    std = np.maximum(stack.std(axis=0, ddof=1), STD_FLOOR_DB)
    dev = current.stack() - mean
    z = dev / std
    flags = np.abs(z) > k_sigma
    geom = current.geometry
    clusters = []
    for k in range(flags.shape[0]):
        labels, n = ndimage.label(flags[k], structure=FOUR_CONNECTED)
        for i in range(n):
            cells = np.argwhere(labels == i + 1)
            xs, ys = geom.cell_center(cells[:, 0], cells[:, 1])
            clusters.append(Cluster(k, cells, (float(xs.mean()), float(ys.mean())),
                                    float(dev[k][labels == i + 1].mean())))
    baseline = BandGrid(tuple(Grid2D(geom, v, DB) for v in mean), current.channel_centers,
                        current.channel_width)
    return AnomalyReport(flags, z, tuple(clusters), baseline, k_sigma)


@dataclass(frozen=True)
class RogueEstimate:
    position: tuple
    excess_power: float
    channel: int
    cluster_cells: int
    fit: object = None


def locate_rogue(report: AnomalyReport, current: BandGrid, refine=False) -> RogueEstimate:
    """Locate the source behind the largest positive-deviation cluster.

    Position is the centroid weighted by linear excess power over the
    baseline; excess power is that excess integrated over the cluster
    (W m^2).  Ties on cluster size go to the lower row-major first cell.
    With ``refine`` a path-loss fit on the excess values is attached.
    """
    current = as_db(_as_band(current))
    positive = [c for c in report.clusters if c.mean_deviation_db > 0]
    if not positive:
        raise AnalyticsError("no positive-deviation cluster to locate")
    geom = current.geometry
    best = min(positive, key=lambda c: (-c.size, c.channel,
                                        int(np.min(c.cells[:, 0] * geom.n_cols + c.cells[:, 1]))))
    r, c = best.cells[:, 0], best.cells[:, 1]
    excess = np.maximum(from_db(current[best.channel].values[r, c])
                        - from_db(report.baseline_db[best.channel].values[r, c]), 0.0)
    if not excess.sum() > 0:
        raise AnalyticsError("cluster carries no excess power")
    xs, ys = geom.cell_center(r, c)
    w = excess / excess.sum()
    position = (float(w @ xs), float(w @ ys))
    fit = None
    if refine and len(excess) >= 4:
        x0, y0, x1, y1 = geom.bounds
        box = (max(xs.min() - geom.cell_size, x0), max(ys.min() - geom.cell_size, y0),
               min(xs.max() + geom.cell_size, x1), min(ys.max() + geom.cell_size, y1))
        fit = fit_pathloss_arrays(np.column_stack([xs, ys]), to_db(np.maximum(excess, LINEAR_FLOOR)),
                                  box, geom.cell_size / 2.0, position)
    return RogueEstimate(position, float(excess.sum() * geom.cell_area), best.channel, best.size, fit)
