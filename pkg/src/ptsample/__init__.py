"""Learned, task-driven sampling of 3D point clouds with an attention LSTM."""

from . import apsnet, data, diffcore, geometry, pointnet, tasknets, training
from .errors import FormatError, InvalidArgument, InvalidState

__version__ = "0.1.0"

__all__ = ["apsnet", "data", "diffcore", "geometry", "pointnet", "tasknets", "training",
           "FormatError", "InvalidArgument", "InvalidState"]
