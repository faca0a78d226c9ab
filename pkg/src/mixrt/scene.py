"""Scene container tying mesh, acceleration structure, field, and maps together."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .displacement import DisplacementMaps
from .fields import HashGridField
from .geometry import BvhAccel, TriMesh, build_bvh


@dataclass
class Scene:
    """Everything needed to render: proxy mesh, radiance field, calibration maps.

    ``maps`` may be None for a field-only scene (no view-dependent
    calibration). The BVH is built on first use and cached; replacing the mesh
    requires a new Scene.
    """

    mesh: TriMesh
    field: HashGridField
    maps: DisplacementMaps | None = None
    background: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    _accel: BvhAccel | None = None

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if np.any(self.background < 0) or np.any(self.background > 1):
            raise ValueError("background color must be in [0, 1]")

    @property
    def accel(self) -> BvhAccel:
        if self._accel is None:
            self._accel = build_bvh(self.mesh)
        return self._accel
