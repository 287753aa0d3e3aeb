"""
Per-vertex scalar data on an icosphere.
"""
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from surfalign.errors import ArgumentError, BoundsError
from surfalign.geometry.icosphere import vertex_count


@dataclass(eq=False)
class SurfaceField:
    """
    V x C float32 values on the level-``mesh_level`` icosphere.

    A 1-D array is accepted and stored as a single channel.
    """
    mesh_level: int
    values: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ArgumentError(f"surface values must be 2-D, got shape {values.shape}")
        expected = vertex_count(self.mesh_level)
        if values.shape[0] != expected:
            raise ArgumentError(
                f"level {self.mesh_level} field needs {expected} rows, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ArgumentError("surface values must be finite")
        self.values = values

    @property
    def num_vertices(self):
        return int(self.values.shape[0])

    @property
    def num_channels(self):
        return int(self.values.shape[1])

    def channel(self, index=0):
        return self.values[:, index]


class SurfaceSeries(SurfaceField):
    """V x T_total time series sampled once per second."""

    @property
    def num_frames(self):
        return self.num_channels

    def frames(self, start, count):
        """
        Consecutive frames [start, start + count).

        Returns:
            numpy.ndarray: V x count slice
        """
        if start < 0 or start + count > self.num_frames:
            raise BoundsError(
                f"frames {start}..{start + count - 1} outside a series of {self.num_frames} frames")
        return self.values[:, start:start + count]
