"""Voxelized scene descriptor field and object classifier field.

A scene is a dense voxel grid over 3D space. Each cell is one of

- ``Regular``: holds a unit descriptor (mean of the scene points that fell
  into the cell, renormalized),
- ``Empty``: observed free space; any object point queried there makes the
  containing pose infeasible (similarity is -inf),
- ``Null``: unobserved space (occlusion, outside the sensed volume);
  similarity is 0, neither reward nor penalty.

Continuous-coordinate queries interpolate trilinearly over the 8 cell
centers surrounding the query point. Empty dominates: if any neighbor
with nonzero weight is Empty the query is Empty. Null neighbors get
weight 0 and the remaining weights are renormalized, so interpolated
descriptors are not biased toward zero at observation boundaries.
Interpolated descriptors are renormalized to unit length. Coordinates
outside the grid AABB are Null.

The classifier field stores per-voxel log-probabilities floored at a
configurable ``c_min``; queries interpolate the stored values, treat
anything outside the AABB as ``c_min``, and clamp to [c_min, 0].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .cloud import StructuredPointCloud, normalize_rows
from .errors import EmptyInput, NonFiniteCoordinate

TAG_EMPTY = 0
TAG_NULL = 1
TAG_REGULAR = 2

NEG_INF = float("-inf")

DEFAULT_C_MIN = -1.0e4

# fractional offsets this close to a lattice plane are snapped so queries
# at voxel centers are exact and grid-aligned shifts stay bit-identical
_SNAP = 1e-9

_CORNER_OFFSETS = np.array(
    [[dx, dy, dz] for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)],
    dtype=np.int64,
)


@dataclass(frozen=True)
class DescriptorValue:
    """Tagged union: Regular(unit vector) | Empty | Null."""

    tag: int
    vector: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.tag not in (TAG_EMPTY, TAG_NULL, TAG_REGULAR):
            raise ValueError(f"unknown descriptor tag {self.tag}")
        if self.tag == TAG_REGULAR:
            v = np.asarray(self.vector, dtype=np.float64)
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise ValueError("Regular descriptor must be unit-norm")
            v = v.copy()
            v.flags.writeable = False
            object.__setattr__(self, "vector", v)
        elif self.vector is not None:
            raise ValueError("Empty/Null carry no payload")

    @staticmethod
    def regular(v) -> "DescriptorValue":
        return DescriptorValue(TAG_REGULAR, np.asarray(v, dtype=np.float64))

    @staticmethod
    def empty() -> "DescriptorValue":
        return DescriptorValue(TAG_EMPTY)

    @staticmethod
    def null() -> "DescriptorValue":
        return DescriptorValue(TAG_NULL)

    @property
    def is_regular(self) -> bool:
        return self.tag == TAG_REGULAR

    @property
    def is_empty(self) -> bool:
        return self.tag == TAG_EMPTY

    @property
    def is_null(self) -> bool:
        return self.tag == TAG_NULL


class _Grid:
    """Shared geometry of scene and classifier fields (x-fastest layout)."""

    def __init__(self, origin, voxel_size: float, dims):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.origin = np.asarray(origin, dtype=np.float64).copy()
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(n) for n in dims)
        if any(n <= 0 for n in self.dims):
            raise ValueError("grid dims must be positive")
        self.origin.flags.writeable = False

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.array(self.dims) * self.voxel_size

    def linear_index(self, ix, iy, iz):
        nx, ny, _ = self.dims
        return ix + nx * (iy + ny * iz)

    def cell_center(self, ix, iy, iz) -> np.ndarray:
        return self.origin + (np.array([ix, iy, iz], dtype=np.float64) + 0.5) * self.voxel_size

    def cell_centers(self, linear: np.ndarray) -> np.ndarray:
        nx, ny, _ = self.dims
        ix = linear % nx
        iy = (linear // nx) % ny
        iz = linear // (nx * ny)
        idx = np.stack([ix, iy, iz], axis=-1).astype(np.float64)
        return self.origin + (idx + 0.5) * self.voxel_size

    def point_indices(self, points: np.ndarray) -> np.ndarray:
        """(N,3) integer voxel indices; caller guarantees points in AABB."""
        idx = np.floor((points - self.origin) / self.voxel_size).astype(np.int64)
        return np.clip(idx, 0, np.array(self.dims) - 1)


@dataclass(frozen=True)
class SceneField:
    """Dense voxel realization of the scene descriptor function."""

    grid: _Grid
    tags: np.ndarray         # (n_cells,) uint8
    descriptors: np.ndarray  # (n_cells, d), zero rows for non-Regular cells

    def __post_init__(self):
        if self.tags.shape != (self.grid.n_cells,):
            raise ValueError("tags length must equal nx*ny*nz")
        if self.descriptors.shape[0] != self.grid.n_cells:
            raise ValueError("descriptor rows must equal nx*ny*nz")
        self.tags.flags.writeable = False
        self.descriptors.flags.writeable = False

    @property
    def origin(self) -> np.ndarray:
        return self.grid.origin

    @property
    def voxel_size(self) -> float:
        return self.grid.voxel_size

    @property
    def dims(self):
        return self.grid.dims

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]

    def regular_linear_indices(self) -> np.ndarray:
        return np.nonzero(self.tags == TAG_REGULAR)[0]


@dataclass(frozen=True)
class ClassifierField:
    """Voxel grid of floored log-probabilities for one object."""

    grid: _Grid
    values: np.ndarray  # (n_cells,), each in [c_min, 0]
    c_min: float

    def __post_init__(self):
        if self.c_min >= 0:
            raise ValueError("c_min must be negative")
        if self.values.shape != (self.grid.n_cells,):
            raise ValueError("values length must equal nx*ny*nz")
        if np.any(self.values > 0) or np.any(self.values < self.c_min):
            raise ValueError("classifier values must lie in [c_min, 0]")
        self.values.flags.writeable = False

    @property
    def origin(self) -> np.ndarray:
        return self.grid.origin

    @property
    def voxel_size(self) -> float:
        return self.grid.voxel_size

    @property
    def dims(self):
        return self.grid.dims


def same_geometry(a, b) -> bool:
    return (
        a.grid.dims == b.grid.dims
        and a.grid.voxel_size == b.grid.voxel_size
        and np.array_equal(a.grid.origin, b.grid.origin)
    )


ObservedEmpty = Union[None, Callable[[int, int, int], bool], np.ndarray]


def build_scene_field(
    points: StructuredPointCloud,
    voxel_size: float,
    observed_empty: ObservedEmpty = None,
    bounds=None,
) -> SceneField:
    """Voxel-downsample a structured point cloud into a scene field.

    Every voxel containing at least one point holds the renormalized mean
    of its points' descriptors. Point-free voxels are Empty where
    ``observed_empty`` holds (callable over voxel indices, or a boolean
    array of shape dims), otherwise Null. The grid AABB covers all points
    with one voxel of padding unless explicit ``bounds=(origin, dims)``
    are given.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pts = points.points
    if not np.all(np.isfinite(pts)):
        raise NonFiniteCoordinate("points must be finite")
    if pts.shape[0] == 0:
        raise EmptyInput("cannot build a field from zero points")

    if bounds is not None:
        origin, dims = bounds
        grid = _Grid(origin, voxel_size, dims)
        if np.any(pts < grid.origin) or np.any(pts >= grid.upper):
            raise ValueError("explicit bounds do not contain all points")
    else:
        lo = pts.min(axis=0) - voxel_size
        hi = pts.max(axis=0) + voxel_size
        dims = np.ceil((hi - lo) / voxel_size).astype(np.int64)
        dims = np.maximum(dims, 1)
        grid = _Grid(lo, voxel_size, dims)

    nx, ny, nz = grid.dims
    idx = grid.point_indices(pts)
    lin = grid.linear_index(idx[:, 0], idx[:, 1], idx[:, 2])

    d = points.descriptor_dim
    sums = np.zeros((grid.n_cells, d))
    np.add.at(sums, lin, points.descriptors)
    counts = np.bincount(lin, minlength=grid.n_cells).astype(np.float64)

    tags = np.full(grid.n_cells, TAG_NULL, dtype=np.uint8)
    descriptors = np.zeros((grid.n_cells, d))

    occupied = counts > 0
    means = np.zeros_like(sums)
    means[occupied] = sums[occupied] / counts[occupied, None]
    unit = normalize_rows(means[occupied])
    # voxels whose descriptors cancel exactly carry no direction: leave Null
    ok = np.linalg.norm(unit, axis=1) > 0
    occ_idx = np.nonzero(occupied)[0]
    tags[occ_idx[ok]] = TAG_REGULAR
    descriptors[occ_idx[ok]] = unit[ok]

    if observed_empty is not None:
        if callable(observed_empty):
            mask = np.zeros(grid.n_cells, dtype=bool)
            for iz in range(nz):
                for iy in range(ny):
                    for ix in range(nx):
                        if observed_empty(ix, iy, iz):
                            mask[grid.linear_index(ix, iy, iz)] = True
        else:
            arr = np.asarray(observed_empty, dtype=bool)
            if arr.shape != (nx, ny, nz):
                raise ValueError("observed_empty array must have shape dims")
            # x-fastest flattening
            mask = arr.transpose(2, 1, 0).reshape(-1)
        tags[mask & ~occupied] = TAG_EMPTY

    return SceneField(grid, tags, descriptors)


def _corner_frame(grid: _Grid, x: np.ndarray):
    """Trilinear lattice data for a batch of query points.

    Returns (linear_indices (n,8), weights (n,8), valid (n,8), outside (n,)).
    Invalid corners have index clipped into range; their weights are kept
    so callers can apply out-of-range semantics explicitly.
    """
    g = (x - grid.origin) / grid.voxel_size - 0.5
    base = np.floor(g)
    frac = g - base
    frac = np.where(frac < _SNAP, 0.0, frac)
    frac = np.where(frac > 1.0 - _SNAP, 1.0, frac)
    base = base.astype(np.int64)

    off = _CORNER_OFFSETS  # (8,3)
    idx3 = base[:, None, :] + off[None, :, :]  # (n,8,3)
    w = np.ones(idx3.shape[:2])
    for a in range(3):
        fa = frac[:, a][:, None]
        w = w * np.where(off[None, :, a] == 1, fa, 1.0 - fa)

    dims = np.array(grid.dims)
    valid = np.all((idx3 >= 0) & (idx3 < dims), axis=2)
    clipped = np.clip(idx3, 0, dims - 1)
    lin = grid.linear_index(clipped[..., 0], clipped[..., 1], clipped[..., 2])
    outside = np.any(x < grid.origin, axis=1) | np.any(x > grid.upper, axis=1)
    return lin, w, valid, outside


def query_descriptor(field: SceneField, x) -> DescriptorValue:
    """Interpolated descriptor at a continuous coordinate.

    Scalar reference implementation, deliberately written as a plain loop
    over the 8 lattice neighbors; the vectorized likelihood path is checked
    against compositions of this function in the tests.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteCoordinate("query coordinate must be finite")
    grid = field.grid
    if np.any(x < grid.origin) or np.any(x > grid.upper):
        return DescriptorValue.null()

    g = (x - grid.origin) / grid.voxel_size - 0.5
    base = np.floor(g)
    frac = g - base
    frac = np.where(frac < _SNAP, 0.0, frac)
    frac = np.where(frac > 1.0 - _SNAP, 1.0, frac)
    bx, by, bz = int(base[0]), int(base[1]), int(base[2])

    accum = np.zeros(field.descriptor_dim)
    saw_regular = False
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                w = ((frac[0] if dx else 1.0 - frac[0])
                     * (frac[1] if dy else 1.0 - frac[1])
                     * (frac[2] if dz else 1.0 - frac[2]))
                if w == 0.0:
                    continue
                ix, iy, iz = bx + dx, by + dy, bz + dz
                if not (0 <= ix < grid.dims[0] and 0 <= iy < grid.dims[1] and 0 <= iz < grid.dims[2]):
                    continue  # beyond the stored grid: unobserved, weight dropped
                lin = grid.linear_index(ix, iy, iz)
                tag = field.tags[lin]
                if tag == TAG_EMPTY:
                    return DescriptorValue.empty()
                if tag == TAG_REGULAR:
                    saw_regular = True
                    accum = accum + w * field.descriptors[lin]

    if not saw_regular:
        return DescriptorValue.null()
    norm = np.linalg.norm(accum)
    if norm == 0.0:
        return DescriptorValue.null()
    return DescriptorValue.regular(accum / norm)


def similarity(a: DescriptorValue, b) -> float:
    """Extended inner product: Regular -> dot, Null -> 0, Empty -> -inf."""
    if a.is_empty:
        return NEG_INF
    if a.is_null:
        return 0.0
    return float(np.dot(a.vector, np.asarray(b, dtype=np.float64)))


def query_classifier(field: ClassifierField, x) -> float:
    """Interpolated log-probability at x, clamped to [c_min, 0]."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteCoordinate("query coordinate must be finite")
    grid = field.grid
    if np.any(x < grid.origin) or np.any(x > grid.upper):
        return field.c_min

    g = (x - grid.origin) / grid.voxel_size - 0.5
    base = np.floor(g)
    frac = g - base
    frac = np.where(frac < _SNAP, 0.0, frac)
    frac = np.where(frac > 1.0 - _SNAP, 1.0, frac)
    bx, by, bz = int(base[0]), int(base[1]), int(base[2])

    total = 0.0
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                w = ((frac[0] if dx else 1.0 - frac[0])
                     * (frac[1] if dy else 1.0 - frac[1])
                     * (frac[2] if dz else 1.0 - frac[2]))
                if w == 0.0:
                    continue
                ix, iy, iz = bx + dx, by + dy, bz + dz
                if 0 <= ix < grid.dims[0] and 0 <= iy < grid.dims[1] and 0 <= iz < grid.dims[2]:
                    total += w * field.values[grid.linear_index(ix, iy, iz)]
                else:
                    total += w * field.c_min  # unobserved beyond the grid
    return float(min(0.0, max(field.c_min, total)))


# --- vectorized batch queries (hot path for the likelihood) ---

def batch_similarity(scene: SceneField, x: np.ndarray, z: np.ndarray):
    """Similarity of interpolated descriptors at x (n,3) against z (n,d).

    Returns (sim (n,), empty (n,)); sim entries where ``empty`` holds are
    meaningless (the caller must treat those points as -inf).
    """
    lin, w, valid, outside = _corner_frame(scene.grid, x)
    tags = scene.tags[lin]
    eff = (w > 0) & valid
    empty = np.any(eff & (tags == TAG_EMPTY), axis=1) & ~outside

    wr = np.where(eff & (tags == TAG_REGULAR), w, 0.0)
    m = np.zeros((x.shape[0], scene.descriptor_dim))
    for c in range(8):
        m += wr[:, c, None] * scene.descriptors[lin[:, c]]
    mnorm = np.linalg.norm(m, axis=1)
    dot = np.einsum("nd,nd->n", m, z)
    sim = np.divide(dot, mnorm, out=np.zeros_like(dot), where=mnorm > 0)
    sim[outside] = 0.0
    return sim, empty


def batch_classifier(cls: ClassifierField, x: np.ndarray) -> np.ndarray:
    """Interpolated classifier log-values at x (n,3), clamped."""
    lin, w, valid, outside = _corner_frame(cls.grid, x)
    vals = np.where(valid, cls.values[lin], cls.c_min)
    out = np.einsum("nc,nc->n", w, vals)
    out[outside] = cls.c_min
    return np.clip(out, cls.c_min, 0.0)
