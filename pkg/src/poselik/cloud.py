"""Structured point clouds: coordinates plus unit feature descriptors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, NonFiniteCoordinate

# descriptor norms may deviate from 1 by float32 storage round-off
NORM_TOL = 1e-6


@dataclass(frozen=True)
class StructuredPointCloud:
    """N points, each carrying a d-dimensional unit descriptor."""

    points: np.ndarray       # (N, 3)
    descriptors: np.ndarray  # (N, d), rows unit-norm within NORM_TOL

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        dsc = np.asarray(self.descriptors, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or dsc.ndim != 2:
            raise ValueError("points must be (N,3) and descriptors (N,d)")
        if pts.shape[0] == 0:
            raise EmptyInput("point cloud has no points")
        if pts.shape[0] != dsc.shape[0]:
            raise ValueError("points and descriptors disagree on N")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteCoordinate("point coordinates must be finite")
        if not np.all(np.isfinite(dsc)):
            raise NonFiniteCoordinate("descriptors must be finite")
        norms = np.linalg.norm(dsc, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise ValueError("descriptors must be unit-norm within 1e-6")
        pts = pts.copy()
        dsc = dsc.copy()
        pts.flags.writeable = False
        dsc.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "descriptors", dsc)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]


def concatenate(a: StructuredPointCloud, b: StructuredPointCloud) -> StructuredPointCloud:
    if a.descriptor_dim != b.descriptor_dim:
        raise ValueError("descriptor dims differ")
    return StructuredPointCloud(
        np.vstack([a.points, b.points]),
        np.vstack([a.descriptors, b.descriptors]),
    )


def normalize_rows(v: np.ndarray) -> np.ndarray:
    """Rows scaled to unit norm (rows of zero norm are left as zeros)."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)
