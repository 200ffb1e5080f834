"""Radio-environment maps: synthetic scenarios, sparse sensing, spatial
estimation, temporal storage and map analytics."""
from . import analytics, field, scenario, sensing, temporal
from .field import BandGrid, Geometry, Grid2D

__version__ = "0.1.0"

__all__ = ["analytics", "field", "scenario", "sensing", "temporal", "BandGrid", "Geometry", "Grid2D"]
