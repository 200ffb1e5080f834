"""Raster field types shared by every other module.

A :class:`Grid2D` samples a scalar field at the centers of a regular
``n_rows x n_cols`` lattice.  ``origin_x, origin_y`` is the south-west corner
of the grid extent and row 0 is the northernmost row (north-up), so the
center of cell ``(r, c)`` is::

    x = origin_x + (c + 0.5) * cell_size
    y = origin_y + (n_rows - r - 0.5) * cell_size
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DB = "dB"
LINEAR = "linear_watts"
UNITS = (DB, LINEAR)

DB_FLOOR = -200.0
LINEAR_FLOOR = 10.0 ** (DB_FLOOR / 10.0)

RASTER_MAGIC = "RMK-GRID 1"


class GeometryMismatch(ValueError):
    pass


class RasterFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Geometry:
    origin_x: float
    origin_y: float
    cell_size: float
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError(f"grid needs at least one cell, got {self.n_rows}x{self.n_cols}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @classmethod
    def from_bounds(cls, x_min, y_min, x_max, y_max, cell_size):
        """Smallest grid anchored at (x_min, y_min) covering the box."""
        n_cols = max(1, math.ceil((x_max - x_min) / cell_size - 1e-9))
        n_rows = max(1, math.ceil((y_max - y_min) / cell_size - 1e-9))
        return cls(float(x_min), float(y_min), float(cell_size), n_rows, n_cols)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def bounds(self):
        """(x_min, y_min, x_max, y_max) of the grid extent."""
        return (
            self.origin_x,
            self.origin_y,
            self.origin_x + self.n_cols * self.cell_size,
            self.origin_y + self.n_rows * self.cell_size,
        )

    @property
    def cell_area(self):
        return self.cell_size * self.cell_size

    def x_centers(self):
        return self.origin_x + (np.arange(self.n_cols) + 0.5) * self.cell_size

    def y_centers(self):
        return self.origin_y + (self.n_rows - np.arange(self.n_rows) - 0.5) * self.cell_size

    def mesh(self):
        """Cell-center coordinate arrays, each of shape (n_rows, n_cols)."""
        return np.meshgrid(self.x_centers(), self.y_centers())

    def cell_center(self, row, col):
        return (
            self.origin_x + (col + 0.5) * self.cell_size,
            self.origin_y + (self.n_rows - row - 0.5) * self.cell_size,
        )

    def cell_of(self, x, y):
        """(row, col) of the cell containing the point, clipped to the grid."""
        col = int(np.clip(np.floor((x - self.origin_x) / self.cell_size), 0, self.n_cols - 1))
        row_from_south = np.floor((y - self.origin_y) / self.cell_size)
        row = int(np.clip(self.n_rows - 1 - row_from_south, 0, self.n_rows - 1))
        return row, col

    def contains(self, x, y):
        x0, y0, x1, y1 = self.bounds
        return bool(np.all((x0 <= np.asarray(x)) & (np.asarray(x) <= x1)
                           & (y0 <= np.asarray(y)) & (np.asarray(y) <= y1)))

    def check_same(self, other: "Geometry"):
        if self != other:
            raise GeometryMismatch(f"grid geometry differs: {self} vs {other}")


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Immutable raster of per-cell values in dB or linear watts."""

    geometry: Geometry
    values: np.ndarray
    unit: str = DB

    def __post_init__(self):
        if self.unit not in UNITS:
            raise ValueError(f"unknown unit {self.unit!r}")
        values = np.array(self.values, dtype=float)
        if values.size != self.geometry.n_rows * self.geometry.n_cols:
            raise GeometryMismatch(
                f"{values.size} values for a {self.geometry.n_rows}x{self.geometry.n_cols} grid")
        values = values.reshape(self.geometry.shape)
        if self.unit == LINEAR and np.any(values < 0):
            raise ValueError("linear power grid holds negative values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    # attribute access mirroring the raster header
    origin_x = property(lambda self: self.geometry.origin_x)
    origin_y = property(lambda self: self.geometry.origin_y)
    cell_size = property(lambda self: self.geometry.cell_size)
    n_rows = property(lambda self: self.geometry.n_rows)
    n_cols = property(lambda self: self.geometry.n_cols)

    def with_values(self, values, unit=None):
        return Grid2D(self.geometry, values, self.unit if unit is None else unit)

    def __eq__(self, other):
        if not isinstance(other, Grid2D):
            return NotImplemented
        return (self.geometry == other.geometry and self.unit == other.unit
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BandGrid:
    """One :class:`Grid2D` per frequency channel, all on the same geometry."""

    grids: tuple
    channel_centers: tuple
    channel_width: float

    def __post_init__(self):
        grids = tuple(self.grids)
        centers = tuple(float(c) for c in self.channel_centers)
        if not grids:
            raise ValueError("BandGrid needs at least one channel")
        if len(grids) != len(centers):
            raise ValueError(f"{len(grids)} grids for {len(centers)} channel centers")
        for g in grids[1:]:
            grids[0].geometry.check_same(g.geometry)
        if any(b <= a for a, b in zip(centers, centers[1:])):
            raise ValueError("channel centers must be strictly increasing")
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "channel_centers", centers)

    @property
    def geometry(self) -> Geometry:
        return self.grids[0].geometry

    @property
    def unit(self):
        return self.grids[0].unit

    @property
    def n_channels(self):
        return len(self.grids)

    def __getitem__(self, k) -> Grid2D:
        return self.grids[k]

    def __len__(self):
        return len(self.grids)

    def __iter__(self):
        return iter(self.grids)

    def stack(self):
        """Values as an array of shape (n_channels, n_rows, n_cols)."""
        return np.stack([g.values for g in self.grids])

    def map(self, fn):
        return BandGrid(tuple(fn(g) for g in self.grids), self.channel_centers, self.channel_width)

    def __eq__(self, other):
        if not isinstance(other, BandGrid):
            return NotImplemented
        return (self.channel_centers == other.channel_centers
                and self.channel_width == other.channel_width
                and all(a == b for a, b in zip(self.grids, other.grids)))

    __hash__ = None


def to_db(g):
    """Linear watts to dBW, clamping anything below 1e-20 W to -200 dB.

    Accepts a :class:`Grid2D`, :class:`BandGrid` or a plain array.
    """
    if isinstance(g, BandGrid):
        return g.map(to_db)
    if isinstance(g, Grid2D):
        if g.unit != LINEAR:
            raise ValueError("to_db expects a linear_watts grid")
        return Grid2D(g.geometry, to_db(g.values), DB)
    v = np.asarray(g, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 10.0 * np.log10(np.maximum(v, LINEAR_FLOOR))
    return np.maximum(out, DB_FLOOR)


def from_db(g):
    """dBW to linear watts."""
    if isinstance(g, BandGrid):
        return g.map(from_db)
    if isinstance(g, Grid2D):
        if g.unit != DB:
            raise ValueError("from_db expects a dB grid")
        return Grid2D(g.geometry, from_db(g.values), LINEAR)
    return 10.0 ** (np.asarray(g, dtype=float) / 10.0)


def as_db(g):
    """Return ``g`` in dB whatever its current unit."""
    if isinstance(g, BandGrid):
        return g.map(as_db)
    return g if g.unit == DB else to_db(g)


def as_linear(g):
    if isinstance(g, BandGrid):
        return g.map(as_linear)
    return g if g.unit == LINEAR else from_db(g)


def _fractional_index(geom: Geometry, x, y):
    col = (np.asarray(x, dtype=float) - geom.origin_x) / geom.cell_size - 0.5
    row = geom.n_rows - 0.5 - (np.asarray(y, dtype=float) - geom.origin_y) / geom.cell_size
    return row, col


def sample_bilinear(g: Grid2D, x, y):
    """Bilinear interpolation between the four surrounding cell centers.

    Between the outermost cell centers and the grid edge the edge value is
    held constant.  Works on scalars or arrays of query points.

    Raises
    ------
    IndexError
        If any query point lies outside the grid extent.
    """
    geom = g.geometry
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x0, y0, x1, y1 = geom.bounds
    tol = 1e-9 * geom.cell_size
    outside = (x < x0 - tol) | (x > x1 + tol) | (y < y0 - tol) | (y > y1 + tol) | ~np.isfinite(x + y)
    if np.any(outside):
        raise IndexError("bilinear query outside grid bounds")
    row, col = _fractional_index(geom, x, y)
    row = np.clip(row, 0.0, geom.n_rows - 1.0)
    col = np.clip(col, 0.0, geom.n_cols - 1.0)
    r0 = np.minimum(np.floor(row).astype(int), max(geom.n_rows - 2, 0))
    c0 = np.minimum(np.floor(col).astype(int), max(geom.n_cols - 2, 0))
    r1 = np.minimum(r0 + 1, geom.n_rows - 1)
    c1 = np.minimum(c0 + 1, geom.n_cols - 1)
    fr = row - r0
    fc = col - c0
    v = g.values
    top = v[r0, c0] * (1.0 - fc) + v[r0, c1] * fc
    bottom = v[r1, c0] * (1.0 - fc) + v[r1, c1] * fc
    out = top * (1.0 - fr) + bottom * fr
    return float(out) if out.ndim == 0 else out


def export_raster(g: Grid2D, path):
    """Write the text raster format (17 significant digits, row-major, north-up)."""
    geom = g.geometry
    lines = [
        RASTER_MAGIC,
        f"{geom.origin_x!r} {geom.origin_y!r} {geom.cell_size!r} {geom.n_rows} {geom.n_cols} {g.unit}",
    ]
    for row in g.values:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(os.fspath(path), "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def import_raster(path) -> Grid2D:
    with open(os.fspath(path), "r", encoding="ascii") as fh:
        text = fh.read()
    return parse_raster(text)


def parse_raster(text: str) -> Grid2D:
    lines = text.splitlines()
    if not lines or lines[0].strip() != RASTER_MAGIC:
        raise RasterFormatError(f"missing {RASTER_MAGIC!r} magic line")
    if len(lines) < 2:
        raise RasterFormatError("missing raster header")
    header = lines[1].split()
    if len(header) != 6:
        raise RasterFormatError(f"header needs 6 fields, got {len(header)}")
    try:
        ox, oy, cs = (float(t) for t in header[:3])
        n_rows, n_cols = int(header[3]), int(header[4])
    except ValueError as exc:
        raise RasterFormatError(f"bad header: {exc}") from None
    unit = header[5]
    if unit not in UNITS:
        raise RasterFormatError(f"unknown unit {unit!r}")
    body = [ln for ln in lines[2:] if ln.strip()]
    if len(body) != n_rows:
        raise RasterFormatError(f"header declares {n_rows} rows, found {len(body)}")
    rows = []
    for i, ln in enumerate(body):
        tokens = ln.split()
        if len(tokens) != n_cols:
            raise RasterFormatError(f"row {i}: expected {n_cols} values, found {len(tokens)}")
        try:
            rows.append([float(t) for t in tokens])
        except ValueError as exc:
            raise RasterFormatError(f"row {i}: {exc}") from None
    try:
        geom = Geometry(ox, oy, cs, n_rows, n_cols)
        return Grid2D(geom, np.array(rows, dtype=float), unit)
    except ValueError as exc:
        raise RasterFormatError(str(exc)) from None


def export_band(band: BandGrid, directory, stem="chan"):
    """Write one raster per channel as ``<stem>_<k>.rmk``; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for k, g in enumerate(band.grids):
        p = os.path.join(directory, f"{stem}_{k}.rmk")
        export_raster(g, p)
        paths.append(p)
    return paths


def import_band(directory, channel_centers: Sequence[float], channel_width: float, stem="chan"):
    grids = []
    for k in range(len(channel_centers)):
        p = os.path.join(directory, f"{stem}_{k}.rmk")
        grids.append(import_raster(p))
    return BandGrid(tuple(grids), tuple(channel_centers), channel_width)


def central_gradient(g: Grid2D):
    """Second-order finite-difference gradient (d/dx, d/dy) in value units per meter.

    Interior cells use central differences; edges use second-order one-sided
    stencils.  ``d/dy`` points north, i.e. against the row index.
    """
    v = g.values
    h = g.cell_size
    if min(v.shape) < 3:
        raise ValueError("gradient needs at least 3x3 cells")
    d_drow, d_dcol = np.gradient(v, h, h, edge_order=2)
    return Grid2D(g.geometry, d_dcol, DB), Grid2D(g.geometry, -d_drow, DB)
