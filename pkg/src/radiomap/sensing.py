"""Sensor placement, measurement synthesis, quantization and bad-data screening."""
from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .field import BandGrid, Geometry, as_db, sample_bilinear
from .seeding import substream

DEDICATED = "dedicated"
CROWD = "crowd"

CSV_HEADER = ["sensor_id", "x_m", "y_m", "channel", "time_index", "psd_db", "flags"]

MAD_SCALE = 1.4826
MIN_SCALE_DB = 1.0


class MeasurementError(ValueError):
    """Invalid measurement data (bounds, duplicates, empty sets)."""


@dataclass(frozen=True)
class Sensor:
    id: str
    position: tuple
    kind: str = DEDICATED


@dataclass(frozen=True)
class Measurement:
    sensor_id: str
    channel_index: int
    time_index: int
    psd_db: float
    quantized: bool = False
    rejected: bool = False

    def flags(self):
        return "|".join(name for name in ("quantized", "rejected") if getattr(self, name))


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    sensors: tuple
    measurements: tuple
    geometry: Geometry

    def __post_init__(self):
        sensors = tuple(self.sensors)
        measurements = tuple(self.measurements)
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "measurements", measurements)
        index = {s.id: i for i, s in enumerate(sensors)}
        if len(index) != len(sensors):
            raise MeasurementError("duplicate sensor ids")
        seen = set()
        for m in measurements:
            if m.sensor_id not in index:
                raise MeasurementError(f"measurement references unknown sensor {m.sensor_id!r}")
            key = (m.sensor_id, m.channel_index, m.time_index)
            if key in seen:
                raise MeasurementError(f"duplicate measurement for {key}")
            seen.add(key)
            if not m.rejected and not math.isfinite(m.psd_db):
                raise MeasurementError(f"non-finite psd for {key}")
        object.__setattr__(self, "_index", index)

    def sensor(self, sensor_id) -> Sensor:
        return self.sensors[self._index[sensor_id]]

    def channels(self):
        return sorted({m.channel_index for m in self.measurements})

    def time_indices(self):
        return sorted({m.time_index for m in self.measurements})

    def select(self, channel=None, time_index=None, include_rejected=False):
        return [m for m in self.measurements
                if (channel is None or m.channel_index == channel)
                and (time_index is None or m.time_index == time_index)
                and (include_rejected or not m.rejected)]

    def arrays(self, channel=0, time_index=None, include_rejected=False):
        """Positions (n, 2) and dB values (n,) of the selected measurements."""
        ms = self.select(channel, time_index, include_rejected)
        xy = np.array([self.sensor(m.sensor_id).position for m in ms], dtype=float).reshape(-1, 2)
        values = np.array([m.psd_db for m in ms], dtype=float)
        return xy, values

    def replace(self, measurements):
        return MeasurementSet(self.sensors, tuple(measurements), self.geometry)

    def __len__(self):
        return len(self.measurements)


def _lattice_rows(n, width, height):
    rows = max(1, int(round(math.sqrt(n * height / width))))
    return min(rows, n)


def place_sensors(geometry: Geometry, n, mode="uniform_grid", seed=0, positions=None, kind=DEDICATED):
    """Place ``n`` sensors inside the grid extent.

    ``uniform_grid`` splits the sensors into a near-square set of rows
    (as even as possible) and spaces each row evenly; ``uniform_random`` draws
    i.i.d. positions from the ``placement`` sub-stream of ``seed``;
    ``custom`` validates the caller's ``positions``.
    """
    x0, y0, x1, y1 = geometry.bounds
    if mode == "custom":
        pts = np.asarray(positions, dtype=float).reshape(-1, 2)
        if not geometry.contains(pts[:, 0], pts[:, 1]):
            raise MeasurementError("custom sensor position outside the area")
    else:
        if n < 1:
            raise MeasurementError("need at least one sensor")
        if mode == "uniform_grid":
            if n > geometry.n_rows * geometry.n_cols:
                raise MeasurementError(f"{n} sensors exceed the {geometry.n_rows * geometry.n_cols} grid cells")
            w, h = x1 - x0, y1 - y0
            n_rows = _lattice_rows(n, w, h)
            pts = []
            for r, chunk in enumerate(np.array_split(np.arange(n), n_rows)):
                y = y1 - (r + 0.5) * h / n_rows
                k = len(chunk)
                for c in range(k):
                    pts.append((x0 + (c + 0.5) * w / k, y))
            pts = np.array(pts)
        elif mode == "uniform_random":
            rng = substream(seed, "placement")
            pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
        else:
            raise MeasurementError(f"unknown placement mode {mode!r}")
    return [Sensor(f"s{i:04d}", (float(px), float(py)), kind) for i, (px, py) in enumerate(pts)]


def synthesize_measurements(truth: BandGrid, sensors, noise_sigma_db=0.0, seed=0, time_index=0,
                            channels=None) -> MeasurementSet:
    """Sample the truth (dB, bilinear) at every sensor and add Gaussian dB noise."""
    if noise_sigma_db < 0:
        raise MeasurementError("noise_sigma_db must be >= 0")
    truth_db = as_db(truth)
    geom = truth_db.geometry
    xy = np.array([s.position for s in sensors], dtype=float).reshape(-1, 2)
    try:
        sample_bilinear(truth_db[0], xy[:, 0], xy[:, 1])
    except IndexError:
        raise MeasurementError("sensor outside the truth grid") from None
    rng = substream(seed, "noise", time_index)
    out = []
    for k in (range(truth_db.n_channels) if channels is None else channels):
        clean = np.atleast_1d(sample_bilinear(truth_db[k], xy[:, 0], xy[:, 1]))
        noise = rng.standard_normal(len(sensors)) * noise_sigma_db if noise_sigma_db > 0 else 0.0
        for s, v in zip(sensors, clean + noise):
            out.append(Measurement(s.id, k, time_index, float(v)))
    return MeasurementSet(tuple(sensors), tuple(out), geom)


def quantize_values(v, n_bits, db_min, db_max):
    """Uniform mid-rise quantizer with 2**n_bits levels, clamped to the range."""
    levels = 2 ** int(n_bits)
    step = (db_max - db_min) / levels
    code = np.clip(np.floor((np.asarray(v, dtype=float) - db_min) / step), 0, levels - 1)
    return db_min + (code + 0.5) * step


def quantize_measurements(ms: MeasurementSet, n_bits, db_min, db_max) -> MeasurementSet:
    if n_bits < 1:
        raise MeasurementError("n_bits must be >= 1")
    if not db_min < db_max:
        raise MeasurementError("db_min must be below db_max")
    out = []
    for m in ms.measurements:
        if m.rejected:
            out.append(m)
            continue
        q = float(quantize_values(m.psd_db, n_bits, db_min, db_max))
        out.append(dataclasses.replace(m, psd_db=q, quantized=True))
    return ms.replace(out)


def spatial_residuals(xy, values, neighbor_count):
    """Each value minus the median of its nearest same-channel neighbors (self excluded)."""
    k = min(neighbor_count, len(values) - 1)
    _, idx = cKDTree(xy).query(xy, k=k + 1)
    neighbors = values[idx[:, 1:]]
    return values - np.median(neighbors, axis=1)


def filter_bad_data(ms: MeasurementSet, k_mad=6.0, neighbor_count=8, min_scale_db=MIN_SCALE_DB) -> MeasurementSet:
    """Flag measurements whose spatial-median residual is an outlier.

    Per (channel, time) group the residual against the median of the
    ``neighbor_count`` nearest neighbors is compared to ``k_mad`` times the
    normalized MAD of all residuals in the group, the MAD being floored at
    ``min_scale_db`` so noiseless fields are not over-flagged.  Groups with fewer than
    ``neighbor_count + 1`` measurements are left alone.  Values are never
    modified; only the ``rejected`` flag is set.
    """
    if not k_mad > 0:
        raise MeasurementError("k_mad must be > 0")
    if neighbor_count < 3:
        raise MeasurementError("neighbor_count must be >= 3")
    rejected = set()
    groups = {}
    for i, m in enumerate(ms.measurements):
        if not m.rejected:
            groups.setdefault((m.channel_index, m.time_index), []).append(i)
    for members in groups.values():
        if len(members) < neighbor_count + 1:
            continue
        xy = np.array([ms.sensor(ms.measurements[i].sensor_id).position for i in members])
        values = np.array([ms.measurements[i].psd_db for i in members])
        resid = spatial_residuals(xy, values, neighbor_count)
        scale = max(MAD_SCALE * np.median(np.abs(resid - np.median(resid))), min_scale_db)
        for i, bad in zip(members, np.abs(resid) > k_mad * scale):
            if bad:
                rejected.add(i)
    return ms.replace([dataclasses.replace(m, rejected=True) if i in rejected else m
                       for i, m in enumerate(ms.measurements)])


def write_measurements_csv(ms: MeasurementSet, path):
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for m in ms.measurements:
            x, y = ms.sensor(m.sensor_id).position
            w.writerow([m.sensor_id, repr(x), repr(y), m.channel_index, m.time_index,
                        repr(float(m.psd_db)), m.flags()])


def read_measurements_csv(path, geometry: Geometry) -> MeasurementSet:
    """Parse the measurement CSV, validating bounds, sensor consistency and duplicates."""
    sensors = {}
    out = []
    with open(os.fspath(path), "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise MeasurementError(f"unexpected CSV header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise MeasurementError(f"line {lineno}: expected {len(CSV_HEADER)} fields")
            sid, xs, ys, ch, t, psd, flags = row
            try:
                pos = (float(xs), float(ys))
                m = Measurement(sid, int(ch), int(t), float(psd),
                                quantized="quantized" in flags.split("|"),
                                rejected="rejected" in flags.split("|"))
            except ValueError as exc:
                raise MeasurementError(f"line {lineno}: {exc}") from None
            if not geometry.contains(*pos):
                raise MeasurementError(f"line {lineno}: sensor {sid} outside the area")
            if sensors.setdefault(sid, pos) != pos:
                raise MeasurementError(f"line {lineno}: sensor {sid} changes position")
            out.append(m)
    return MeasurementSet(tuple(Sensor(k, v) for k, v in sensors.items()), tuple(out), geometry)
