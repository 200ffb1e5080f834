"""Radio map maintenance over time.

A :class:`MapSeries` keeps the sliding window of recent measurement epochs,
an archive of every committed map estimate, and a store of quantized tiles
that is refreshed incrementally where the map changed.
"""
from __future__ import annotations

import math
import os
import re
import struct
import threading
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .estimate import estimate_map
from .field import DB, BandGrid, Geometry, GeometryMismatch, Grid2D, as_db
from .sensing import Measurement, MeasurementError, MeasurementSet

TILE_MAGIC = b"RMKT"
TILE_VERSION = 1
TILE_HEADER = struct.Struct("<4sBBHddII")
assert TILE_HEADER.size == 32


class TemporalError(ValueError):
    pass


@dataclass(frozen=True)
class Epoch:
    time_index: int
    measurements: MeasurementSet
    estimate: BandGrid


@dataclass(frozen=True, eq=False)
class QuantizedTile:
    channel: int
    row: int
    col: int
    n_bits: int
    db_min: float
    db_max: float
    codes: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.uint32)
        if codes.ndim != 2:
            raise ValueError("tile codes must be 2-D")
        if not 1 <= self.n_bits <= 16:
            raise ValueError("n_bits must be in [1, 16]")
        if np.any(codes >= 2 ** self.n_bits):
            raise ValueError("tile code exceeds 2**n_bits - 1")
        if not self.db_min <= self.db_max:
            raise ValueError("tile db_min above db_max")
        codes.flags.writeable = False
        object.__setattr__(self, "codes", codes)

    @property
    def shape(self):
        return self.codes.shape

    @property
    def key(self):
        return (self.epoch, self.channel, self.row, self.col)

    def decode(self):
        if self.db_max == self.db_min:
            return np.full(self.shape, self.db_min)
        step = (self.db_max - self.db_min) / (2 ** self.n_bits - 1)
        return self.db_min + self.codes * step

    def __eq__(self, other):
        if not isinstance(other, QuantizedTile):
            return NotImplemented
        return (self.channel, self.row, self.col, self.n_bits, self.db_min, self.db_max) == \
            (other.channel, other.row, other.col, other.n_bits, other.db_min, other.db_max) \
            and np.array_equal(self.codes, other.codes)

    __hash__ = None


def encode_tile(values, n_bits, channel=0, row=0, col=0, epoch=0) -> QuantizedTile:
    """Min/max scaled mid-tread quantization of one tile of dB values.

    Codes are ``round((v - min) / step)`` with ``step = (max - min) / (2**n - 1)``,
    so the tile's own min and max decode exactly and the error is at most
    ``step / 2``.
    """
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        codes = np.zeros(values.shape, dtype=np.uint32)
    else:
        step = (hi - lo) / (2 ** n_bits - 1)
        codes = np.clip(np.rint((values - lo) / step), 0, 2 ** n_bits - 1).astype(np.uint32)
    return QuantizedTile(channel, row, col, int(n_bits), lo, hi, codes, epoch)


def _tile_slices(geometry: Geometry, tile_size):
    for r in range(math.ceil(geometry.n_rows / tile_size)):
        for c in range(math.ceil(geometry.n_cols / tile_size)):
            yield r, c, slice(r * tile_size, (r + 1) * tile_size), slice(c * tile_size, (c + 1) * tile_size)


def quantize_tiles(band: BandGrid, n_bits=8, tile_size=16, epoch=0):
    """Cut every channel into ``tile_size`` square tiles (smaller at the edges) and quantize."""
    if not 1 <= n_bits <= 16:
        raise TemporalError("n_bits must be in [1, 16]")
    if tile_size < 8:
        raise TemporalError("tile_size must be >= 8")
    band = as_db(band)
    tiles = []
    for k, g in enumerate(band.grids):
        for r, c, rs, cs in _tile_slices(g.geometry, tile_size):
            tiles.append(encode_tile(g.values[rs, cs], n_bits, k, r, c, epoch))
    return tiles


def dequantize_tiles(tiles, geometry: Geometry, channel_centers=None, channel_width=1.0, tile_size=None):
    """Reassemble a dB BandGrid from tiles (later epochs overwrite earlier ones)."""
    tiles = sorted(tiles, key=lambda t: t.key)
    if not tiles:
        raise TemporalError("no tiles to decode")
    if tile_size is None:
        tile_size = max(max(t.shape) for t in tiles)
    n_chan = max(t.channel for t in tiles) + 1
    out = np.full((n_chan,) + geometry.shape, np.nan)
    for t in tiles:
        r0, c0 = t.row * tile_size, t.col * tile_size
        out[t.channel, r0:r0 + t.shape[0], c0:c0 + t.shape[1]] = t.decode()
    if np.isnan(out).any():
        raise TemporalError("tiles do not cover the grid")
    centers = tuple(float(k) for k in range(n_chan)) if channel_centers is None else channel_centers
    return BandGrid(tuple(Grid2D(geometry, v, DB) for v in out), centers, channel_width)


def tile_to_bytes(t: QuantizedTile) -> bytes:
    rows, cols = t.shape
    header = TILE_HEADER.pack(TILE_MAGIC, TILE_VERSION, t.n_bits, 0, t.db_min, t.db_max, rows, cols)
    bits = ((t.codes.reshape(-1, 1) >> np.arange(t.n_bits, dtype=np.uint32)) & 1).astype(np.uint8)
    return header + np.packbits(bits.ravel(), bitorder="little").tobytes()


def tile_from_bytes(data: bytes, channel=0, row=0, col=0, epoch=0) -> QuantizedTile:
    if len(data) < TILE_HEADER.size:
        raise TemporalError("truncated tile header")
    magic, version, n_bits, _, lo, hi, rows, cols = TILE_HEADER.unpack_from(data)
    if magic != TILE_MAGIC or version != TILE_VERSION:
        raise TemporalError("not a tile file")
    n = rows * cols
    payload = np.frombuffer(data, dtype=np.uint8, offset=TILE_HEADER.size)
    bits = np.unpackbits(payload, bitorder="little")
    if len(bits) < n * n_bits:
        raise TemporalError("truncated tile payload")
    bits = bits[:n * n_bits].reshape(n, n_bits).astype(np.uint32)
    codes = (bits << np.arange(n_bits, dtype=np.uint32)).sum(axis=1).reshape(rows, cols)
    return QuantizedTile(channel, row, col, n_bits, lo, hi, codes, epoch)


def write_tile_store(tiles, root):
    """Write ``epoch_<t>/chan_<k>/tile_<r>_<c>.bin`` files; returns the paths."""
    paths = []
    for t in tiles:
        d = os.path.join(root, f"epoch_{t.epoch}", f"chan_{t.channel}")
        os.makedirs(d, exist_ok=True)
        p = os.path.join(d, f"tile_{t.row}_{t.col}.bin")
        with open(p, "wb") as fh:
            fh.write(tile_to_bytes(t))
        paths.append(p)
    return paths


_TILE_PATH = re.compile(r"epoch_(-?\d+)[/\\]chan_(\d+)[/\\]tile_(\d+)_(\d+)\.bin$")


def read_tile_store(root):
    tiles = []
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            p = os.path.join(dirpath, name)
            m = _TILE_PATH.search(os.path.relpath(p, root))
            if not m:
                continue
            e, k, r, c = (int(g) for g in m.groups())
            with open(p, "rb") as fh:
                tiles.append(tile_from_bytes(fh.read(), k, r, c, e))
    return sorted(tiles, key=lambda t: t.key)


class MapSeries:
    """Sliding window of epochs, archive of committed maps and the tile store.

    Mutating operations take the series lock; readers should work on the
    returned snapshots (BandGrids are immutable).
    """

    def __init__(self, geometry: Geometry, window_length=1, channel_centers=None, channel_width=1.0,
                 n_bits=8, tile_size=16):
        if window_length < 1:
            raise TemporalError("window_length must be >= 1")
        self.geometry = geometry
        self.window_length = int(window_length)
        self.channel_centers = channel_centers
        self.channel_width = channel_width
        self.n_bits = n_bits
        self.tile_size = tile_size
        self.window = []
        self.archive = {}
        self.tiles = {}
        self._tile_ref = None
        self._lock = threading.Lock()

    @property
    def times(self):
        return sorted(self.archive)

    def estimates(self):
        return [self.archive[t] for t in self.times]

    def latest_tiles(self):
        """Newest version of every (channel, row, col) tile."""
        latest = {}
        for key in sorted(self.tiles):
            latest[key[1:]] = self.tiles[key]
        return list(latest.values())

    def commit(self, time_index, estimate: BandGrid):
        """Record an externally produced estimate in the archive."""
        with self._lock:
            estimate.geometry.check_same(self.geometry)
            if self.archive and time_index <= max(self.archive):
                raise TemporalError("epoch time indices must increase")
            self.archive[int(time_index)] = as_db(estimate)
        return self


def _epoch_time(ms: MeasurementSet):
    times = ms.time_indices()
    if len(times) != 1:
        raise TemporalError(f"an epoch must hold exactly one time index, got {times}")
    return times[0]


def pool_window(epochs, time_index, geometry):
    """Recency-weighted per-(sensor, channel) mean over the window (weight 1 / (1 + age))."""
    sensors = {}
    sums = {}
    n = len(epochs)
    for i, ep in enumerate(epochs):
        w = 1.0 / (1.0 + (n - 1 - i))
        for s in ep.measurements.sensors:
            if sensors.setdefault(s.id, s).position != s.position:
                raise MeasurementError(f"sensor {s.id} moved between epochs")
        for m in ep.measurements.measurements:
            if m.rejected:
                continue
            acc = sums.setdefault((m.sensor_id, m.channel_index), [0.0, 0.0, False])
            acc[0] += w * m.psd_db
            acc[1] += w
            acc[2] = acc[2] or m.quantized
    pooled = [Measurement(sid, ch, time_index, v / w, quantized=q)
              for (sid, ch), (v, w, q) in sorted(sums.items())]
    used = {m.sensor_id for m in pooled}
    return MeasurementSet(tuple(s for s in sensors.values() if s.id in used), tuple(pooled), geometry)


def window_update(series: MapSeries, new_epoch: MeasurementSet, config) -> MapSeries:
    """Append an epoch, evict beyond the window and re-estimate the newest map.

    Older archived estimates are left untouched.  Returns ``series``.
    """
    t = _epoch_time(new_epoch)
    with series._lock:
        if series.window and t <= series.window[-1].time_index:
            raise TemporalError(f"time index {t} is not after {series.window[-1].time_index}")
        if series.archive and t <= max(series.archive):
            raise TemporalError(f"time index {t} is not after the archive")
        epochs = (series.window + [Epoch(t, new_epoch, None)])[-series.window_length:]
        pooled = epochs[0].measurements if len(epochs) == 1 else pool_window(epochs, t, series.geometry)
        estimate = estimate_map(pooled, config, geometry=series.geometry,
                                channel_centers=series.channel_centers, channel_width=series.channel_width)
        epochs[-1] = Epoch(t, new_epoch, estimate)
        series.window = epochs
        series.archive[t] = estimate
    return series


def interpolate_time(series: MapSeries, t_query) -> BandGrid:
    """Inverse-time-distance blend (dB) of the two archived maps bracketing ``t_query``."""
    times = series.times
    if not times:
        raise TemporalError("series is empty")
    if t_query in series.archive:
        return series.archive[t_query]
    if not times[0] < t_query < times[-1]:
        raise TemporalError(f"t_query {t_query} outside [{times[0]}, {times[-1]}]")
    hi = next(t for t in times if t > t_query)
    lo = max(t for t in times if t < t_query)
    w_lo = 1.0 / (t_query - lo)
    w_hi = 1.0 / (hi - t_query)
    a, b = w_lo / (w_lo + w_hi), w_hi / (w_lo + w_hi)
    m0, m1 = series.archive[lo], series.archive[hi]
    grids = tuple(Grid2D(g0.geometry, a * g0.values + b * g1.values, DB) for g0, g1 in zip(m0, m1))
    return BandGrid(grids, m0.channel_centers, m0.channel_width)


def incremental_update(series: MapSeries, new_map: BandGrid, change_threshold_db=1.0, epoch=None):
    """Re-encode only tiles where ``new_map`` moved more than the threshold.

    The comparison is against the map values the stored tiles were encoded
    from.  Returns (updated tiles, fraction of tiles updated).
    """
    new_map = as_db(new_map)
    new_map.geometry.check_same(series.geometry)
    with series._lock:
        if epoch is None:
            epoch = max(series.archive) if series.archive else 0
        values = new_map.stack()
        if series._tile_ref is not None and series._tile_ref.shape != values.shape:
            raise GeometryMismatch("channel count differs from the stored tiles")
        updated, total = [], 0
        for k in range(values.shape[0]):
            for r, c, rs, cs in _tile_slices(series.geometry, series.tile_size):
                total += 1
                block = values[k, rs, cs]
                if series._tile_ref is not None:
                    delta = np.max(np.abs(block - series._tile_ref[k, rs, cs]))
                    if not delta > change_threshold_db:
                        continue
                updated.append(encode_tile(block, series.n_bits, k, r, c, epoch))
        if series._tile_ref is None:
            series._tile_ref = values.copy()
        for t in updated:
            rs = slice(t.row * series.tile_size, (t.row + 1) * series.tile_size)
            cs = slice(t.col * series.tile_size, (t.col + 1) * series.tile_size)
            series._tile_ref[t.channel, rs, cs] = values[t.channel, rs, cs]
            series.tiles[t.key] = t
    return updated, len(updated) / total


def _ceil_ratio(a, b):
    q = Fraction(a).limit_denominator(10 ** 9) / Fraction(b).limit_denominator(10 ** 9)
    return math.ceil(q)


def storage_size_bits(area_km2, cell_m, band_mhz, chan_mhz, duration_h, step_min, bits_per_px=8):
    """Bits needed for a full-resolution map archive.

    channels x cells-per-side^2 x time steps x bits per pixel, each count
    rounded up.  ``area_km2`` may also be a (width_km, height_km) pair.
    """
    if np.ndim(area_km2):
        w_km, h_km = area_km2
    else:
        w_km = h_km = math.sqrt(area_km2)
    args = (w_km, h_km, cell_m, band_mhz, chan_mhz, duration_h, step_min, bits_per_px)
    if any(not a > 0 for a in args):
        raise ValueError("storage_size_bits arguments must all be > 0")
    channels = _ceil_ratio(band_mhz, chan_mhz)
    cells = _ceil_ratio(w_km * 1000, cell_m) * _ceil_ratio(h_km * 1000, cell_m)
    steps = _ceil_ratio(duration_h * 60, step_min)
    return int(channels * cells * steps * int(bits_per_px))
