import numpy as np
import pytest

from radiomap.field import DB, LINEAR, BandGrid, Geometry, Grid2D
from radiomap.sensing import Measurement, MeasurementSet, Sensor


def make_ms(xy, values, geometry=None, channel=0, time_index=0):
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    sensors = tuple(Sensor(f"s{i:04d}", (float(x), float(y)), "dedicated") for i, (x, y) in enumerate(xy))
    meas = tuple(Measurement(s.id, channel, time_index, float(v)) for s, v in zip(sensors, values))
    return MeasurementSet(sensors, meas, geometry)


def band(geometry, *arrays, unit=DB):
    grids = tuple(Grid2D(geometry, np.asarray(a, dtype=float), unit) for a in arrays)
    return BandGrid(grids, tuple(float(k) for k in range(len(grids))), 1.0)


@pytest.fixture
def geom10():
    return Geometry(0.0, 0.0, 10.0, 10, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["make_ms", "band", "DB", "LINEAR"]
