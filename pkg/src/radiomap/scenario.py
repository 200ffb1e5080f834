"""Synthetic ground truth: log-distance path loss, wall penetration and
correlated log-normal shadowing, superposed over transmitters per channel."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.signal import fftconvolve

from .field import DB, LINEAR, BandGrid, Geometry, Grid2D
from .seeding import substream


class ScenarioError(ValueError):
    """Invalid or inconsistent scenario description."""


@dataclass(frozen=True)
class Transmitter:
    id: str
    position: tuple
    tx_power: float = 1.0
    channel_index: int = 0
    reference_gain_db: float = -30.0

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if not self.tx_power > 0:
            raise ScenarioError(f"transmitter {self.id}: tx_power must be > 0")


@dataclass(frozen=True)
class Obstacle:
    start: tuple
    end: tuple
    penetration_loss: float

    def __post_init__(self):
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", (float(self.end[0]), float(self.end[1])))
        if self.start == self.end:
            raise ScenarioError("obstacle endpoints must differ")
        if not self.penetration_loss > 0:
            raise ScenarioError("obstacle penetration_loss must be > 0")


@dataclass(frozen=True)
class PropagationParams:
    pathloss_exponent: float = 3.0
    shadowing_sigma: float = 0.0
    decorrelation_distance: float = 100.0
    noise_floor: float = -130.0

    def __post_init__(self):
        if not self.pathloss_exponent > 0:
            raise ScenarioError("pathloss_exponent must be > 0")
        if not self.shadowing_sigma >= 0:
            raise ScenarioError("shadowing_sigma must be >= 0")
        if not self.decorrelation_distance > 0:
            raise ScenarioError("decorrelation_distance must be > 0")


@dataclass(frozen=True)
class Scenario:
    area: tuple
    resolution: float
    transmitters: tuple
    obstacles: tuple = ()
    propagation: PropagationParams = field(default_factory=PropagationParams)
    rng_seed: int = 0
    channel_centers: tuple = (100e6,)
    channel_width: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "area", tuple(float(a) for a in self.area))
        object.__setattr__(self, "transmitters", tuple(self.transmitters))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "channel_centers", tuple(float(c) for c in self.channel_centers))
        x0, y0, x1, y1 = self.area
        if not (x1 > x0 and y1 > y0):
            raise ScenarioError(f"degenerate area {self.area}")
        if not self.resolution > 0:
            raise ScenarioError("resolution must be > 0")
        ids = [t.id for t in self.transmitters]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate transmitter ids")
        for t in self.transmitters:
            px, py = t.position
            if not (x0 <= px <= x1 and y0 <= py <= y1):
                raise ScenarioError(f"transmitter {t.id} outside area")
            if not 0 <= t.channel_index < len(self.channel_centers):
                raise ScenarioError(f"transmitter {t.id}: channel_index {t.channel_index} out of range")

    @property
    def geometry(self) -> Geometry:
        return Geometry.from_bounds(*self.area, self.resolution)

    def transmitter(self, tx_id) -> Transmitter:
        for t in self.transmitters:
            if t.id == str(tx_id):
                return t
        raise KeyError(f"unknown transmitter id {tx_id!r}")


def pathloss_gain_db(p: PropagationParams, tx: Transmitter, x, y, d_min=0.0):
    """Log-distance channel gain ``ref - 10 * eta * log10(max(d, d_min) / 1 m)``."""
    d = np.hypot(np.asarray(x, dtype=float) - tx.position[0], np.asarray(y, dtype=float) - tx.position[1])
    d = np.maximum(d, d_min)
    with np.errstate(divide="ignore"):
        return tx.reference_gain_db - 10.0 * p.pathloss_exponent * np.log10(d)


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def crossings(obstacle: Obstacle, px, py, qx, qy):
    """True where segment P-Q properly crosses the obstacle (touching does not count)."""
    (ax, ay), (bx, by) = obstacle.start, obstacle.end
    d1 = _orient(px, py, qx, qy, ax, ay)
    d2 = _orient(px, py, qx, qy, bx, by)
    d3 = _orient(ax, ay, bx, by, px, py)
    d4 = _orient(ax, ay, bx, by, qx, qy)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def obstruction_loss_db(obstacles, tx: Transmitter, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    loss = np.zeros(np.broadcast(x, y).shape)
    px, py = tx.position
    for ob in obstacles:
        loss = loss + np.where(crossings(ob, px, py, x, y), ob.penetration_loss, 0.0)
    return loss if loss.ndim else float(loss)


def _exponential_kernel(corr_cells):
    """Mixing kernel whose self-convolution approximates exp(-r / corr_cells).

    The kernel is the inverse FFT of the square root of the covariance
    spectrum, truncated to a disk of radius 3 * corr_cells and normalized to
    unit energy so the output variance is exact.
    """
    radius = max(1, int(math.ceil(3.0 * corr_cells)))
    size = 64
    while size < 8 * radius:
        size *= 2
    lag = np.minimum(np.arange(size), size - np.arange(size))
    r = np.hypot(lag[:, None], lag[None, :])
    cov = np.exp(-r / corr_cells)
    spectrum = np.clip(np.fft.fft2(cov).real, 0.0, None)
    kernel = np.fft.fftshift(np.fft.ifft2(np.sqrt(spectrum)).real)
    c = size // 2
    kernel = kernel[c - radius:c + radius + 1, c - radius:c + radius + 1].copy()
    off = np.arange(-radius, radius + 1)
    kernel[np.hypot(off[:, None], off[None, :]) > radius] = 0.0
    return kernel / np.sqrt(np.sum(kernel ** 2))


def shadowing_field(p: PropagationParams, geometry: Geometry, seed, stream=()) -> Grid2D:
    """Zero-mean Gaussian field (dB) with covariance sigma^2 exp(-d / decorrelation).

    ``stream`` names the sub-stream of ``seed`` used for the white noise so
    that several independent fields can share one seed.
    """
    if p.shadowing_sigma == 0:
        return Grid2D(geometry, np.zeros(geometry.shape), DB)
    kernel = _exponential_kernel(p.decorrelation_distance / geometry.cell_size)
    radius = kernel.shape[0] // 2
    rng = substream(seed, "shadowing", *stream)
    white = rng.standard_normal((geometry.n_rows + 2 * radius, geometry.n_cols + 2 * radius))
    values = p.shadowing_sigma * fftconvolve(white, kernel, mode="valid")
    return Grid2D(geometry, values, DB)


def _tx_shadowing(s: Scenario, tx: Transmitter) -> Grid2D:
    # keyed on the transmitter id so single-transmitter sub-scenarios share fields
    return shadowing_field(s.propagation, s.geometry, s.rng_seed, stream=("tx", tx.id))


def channel_gain_map(s: Scenario, tx_id) -> Grid2D:
    """Channel gain g_w(x) in dB for one transmitter; excludes transmit power."""
    tx = s.transmitter(tx_id)
    geom = s.geometry
    xs, ys = geom.mesh()
    gain = pathloss_gain_db(s.propagation, tx, xs, ys, d_min=geom.cell_size / 2.0)
    gain = gain + _tx_shadowing(s, tx).values
    if s.obstacles:
        gain = gain - obstruction_loss_db(s.obstacles, tx, xs, ys)
    return Grid2D(geom, gain, DB)


def generate_ground_truth(s: Scenario) -> BandGrid:
    """Per-channel received power in linear watts, summed over transmitters."""
    geom = s.geometry
    power = [np.zeros(geom.shape) for _ in s.channel_centers]
    for tx in s.transmitters:
        gain = channel_gain_map(s, tx.id).values
        power[tx.channel_index] = power[tx.channel_index] + tx.tx_power * 10.0 ** (gain / 10.0)
    grids = tuple(Grid2D(geom, p, LINEAR) for p in power)
    return BandGrid(grids, s.channel_centers, s.channel_width)


def gain_maps(s: Scenario):
    return {tx.id: channel_gain_map(s, tx.id) for tx in s.transmitters}


# -- config files -------------------------------------------------------------

def random_obstacles(area, count, length_m, loss_db, seed):
    """Randomly placed wall segments fully inside ``area``."""
    rng = substream(seed, "obstacles")
    x0, y0, x1, y1 = area
    out = []
    while len(out) < count:
        cx, cy = rng.uniform(x0, x1), rng.uniform(y0, y1)
        length = rng.uniform(*length_m)
        theta = rng.uniform(0.0, math.pi)
        dx, dy = 0.5 * length * math.cos(theta), 0.5 * length * math.sin(theta)
        a = (min(max(cx - dx, x0), x1), min(max(cy - dy, y0), y1))
        b = (min(max(cx + dx, x0), x1), min(max(cy + dy, y0), y1))
        loss = rng.uniform(*loss_db)
        if a != b:
            out.append(Obstacle(a, b, float(loss)))
    return out


def scenario_from_dict(d, seed=None) -> Scenario:
    """Build a :class:`Scenario` from a parsed config mapping.

    ``seed`` overrides the ``seed`` key.  A ``random_obstacles`` block
    (``count``, ``length_m: [lo, hi]``, ``loss_db: [lo, hi]``) adds walls drawn
    from the seed's ``obstacles`` sub-stream.
    """
    try:
        rng_seed = int(d.get("seed", 0) if seed is None else seed)
        area = tuple(float(v) for v in d["area"])
        if len(area) != 4:
            raise ScenarioError("area must be [x_min, y_min, x_max, y_max]")
        chan = d.get("channels", {}) or {}
        centers = tuple(float(c) for c in chan.get("centers_hz", [100e6]))
        width = float(chan.get("width_hz", 1e6))
        prop = PropagationParams(**(d.get("propagation") or {}))
        txs = []
        for i, t in enumerate(d.get("transmitters") or []):
            txs.append(Transmitter(
                id=str(t.get("id", i)),
                position=tuple(t["position"]),
                tx_power=float(t.get("tx_power", 1.0)),
                channel_index=int(t.get("channel_index", 0)),
                reference_gain_db=float(t.get("reference_gain_db", -30.0)),
            ))
        obstacles = [Obstacle(tuple(o["start"]), tuple(o["end"]), float(o["penetration_loss"]))
                     for o in d.get("obstacles") or []]
        ro = d.get("random_obstacles")
        if ro:
            obstacles += random_obstacles(area, int(ro["count"]), tuple(ro["length_m"]),
                                          tuple(ro["loss_db"]), rng_seed)
        return Scenario(area=area, resolution=float(d["resolution"]), transmitters=tuple(txs),
                        obstacles=tuple(obstacles), propagation=prop, rng_seed=rng_seed,
                        channel_centers=centers, channel_width=width)
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad scenario config: {exc!r}") from None


def scenario_to_dict(s: Scenario):
    """Fully resolved config (random obstacles expanded) suitable for YAML."""
    p = s.propagation
    return {
        "seed": int(s.rng_seed),
        "area": list(s.area),
        "resolution": float(s.resolution),
        "channels": {"centers_hz": list(s.channel_centers), "width_hz": float(s.channel_width)},
        "propagation": {
            "pathloss_exponent": float(p.pathloss_exponent),
            "shadowing_sigma": float(p.shadowing_sigma),
            "decorrelation_distance": float(p.decorrelation_distance),
            "noise_floor": float(p.noise_floor),
        },
        "transmitters": [
            {"id": t.id, "position": list(t.position), "tx_power": float(t.tx_power),
             "channel_index": int(t.channel_index), "reference_gain_db": float(t.reference_gain_db)}
            for t in s.transmitters
        ],
        "obstacles": [
            {"start": list(o.start), "end": list(o.end), "penetration_loss": float(o.penetration_loss)}
            for o in s.obstacles
        ],
    }


def load_scenario(path, seed=None) -> Scenario:
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        d = yaml.safe_load(fh)
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: expected a mapping")
    if "scenario" in d and isinstance(d["scenario"], dict):
        d = d["scenario"]
    return scenario_from_dict(d, seed=seed)
