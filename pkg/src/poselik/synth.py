"""Synthetic scenes with known ground truth.

The generator reproduces, fully synthetically, the regime where a
symmetric object with an occluded asymmetric part must be localized: a
cylindrical "mug" whose descriptors depend only on height (so every yaw
is equally plausible) with its handle hidden inside an unobserved region,
a box with configurable k-fold descriptor symmetry, and a free-form
point-blob instance whose points sit exactly at voxel centers.

Scene occupancy is sampled thicker than the object surface (half a wall
of ~1.5 voxels to each side, lattice step well under a voxel), which
guarantees that every trilinear neighbor of every object point is an
occupied voxel under on-manifold poses; unoccupied voxels within one cell
of occupancy and voxels inside the occlusion region are Null, everything
else observed is Empty.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np

from .cloud import StructuredPointCloud, normalize_rows
from .errors import InvalidSpec, NoRegularVoxels
from .field import (DEFAULT_C_MIN, TAG_REGULAR, ClassifierField, SceneField,
                    _Grid, build_scene_field)
from .se3 import Pose, pose_apply

DEFAULT_BB_THRESHOLD = 0.7

_WALL_HALF = 1.5    # wall half-thickness, voxels
_STEP = 0.375       # scene sampling step, voxels


# --- occlusion regions ---

@dataclass(frozen=True)
class HalfSpace:
    normal: np.ndarray
    offset: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return pts @ np.asarray(self.normal, dtype=np.float64) >= self.offset


@dataclass(frozen=True)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def contains(self, pts: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        return np.all((pts >= lo) & (pts <= hi), axis=1)


@dataclass(frozen=True)
class Annulus:
    """Cylindrical shell about a vertical axis (world frame)."""

    axis_xy: np.ndarray
    r_inner: float
    r_outer: float
    z_min: float
    z_max: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        dxy = pts[:, :2] - np.asarray(self.axis_xy, dtype=np.float64)
        r = np.linalg.norm(dxy, axis=1)
        return ((r >= self.r_inner) & (r <= self.r_outer)
                & (pts[:, 2] >= self.z_min) & (pts[:, 2] <= self.z_max))


def _occlusion_from_dict(d: dict):
    kind = d.get("type")
    if kind == "halfspace":
        return HalfSpace(np.asarray(d["normal"], dtype=np.float64), float(d["offset"]))
    if kind == "aabb":
        return Aabb(np.asarray(d["lo"], dtype=np.float64), np.asarray(d["hi"], dtype=np.float64))
    if kind == "annulus":
        return Annulus(np.asarray(d["axis_xy"], dtype=np.float64), float(d["r_inner"]),
                       float(d["r_outer"]), float(d["z_min"]), float(d["z_max"]))
    raise InvalidSpec(f"unknown occlusion type {kind!r}")


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "mug"               # mug | box | points
    symmetry: int = 8               # k-fold descriptor symmetry about z
    descriptor_dim: int = 16
    sigma_z: float = 0.0            # scene-side descriptor noise
    occlusion: Optional[object] = "auto"  # "auto" | None | region | dict
    clutter: int = 150
    voxel_size: float = 0.05
    gt_pose: Pose = dc_field(default_factory=Pose.identity)
    seed: int = 0
    radius_voxels: float = 6.0      # mug radius / box half-width
    height_voxels: float = 10.0
    handle: bool = True             # mug only
    n_points: int = 64              # points kind only
    bb_threshold: float = DEFAULT_BB_THRESHOLD
    c_min: float = DEFAULT_C_MIN

    def __post_init__(self):
        if self.kind not in ("mug", "box", "points"):
            raise InvalidSpec(f"unknown kind {self.kind!r}")
        if self.symmetry < 1:
            raise InvalidSpec("symmetry order must be >= 1")
        if self.kind == "box" and self.symmetry not in (1, 2, 4):
            raise InvalidSpec("box instances support k in {1, 2, 4}")
        if self.descriptor_dim < 2:
            raise InvalidSpec("descriptor_dim must be >= 2")
        if self.sigma_z < 0:
            raise InvalidSpec("sigma_z must be >= 0")
        if self.voxel_size <= 0:
            raise InvalidSpec("voxel_size must be positive")
        if self.clutter < 0 or self.n_points < 1:
            raise InvalidSpec("counts must be nonnegative")
        if self.radius_voxels < 3 or self.height_voxels < 5:
            raise InvalidSpec("object too small for the wall thickness")


@dataclass
class SynthInstance:
    object: StructuredPointCloud
    scene: SceneField
    classifier: ClassifierField
    gt_pose: Pose
    symmetry_group: List[Pose]
    occlusion: Optional[object] = None


def spec_from_dict(d: dict) -> SynthSpec:
    d = dict(d)
    if "gt_pose" in d and isinstance(d["gt_pose"], dict):
        from .formats import pose_from_dict
        try:
            d["gt_pose"] = pose_from_dict(d["gt_pose"])
        except (KeyError, ValueError) as exc:
            raise InvalidSpec(f"bad gt_pose: {exc}") from exc
    if isinstance(d.get("occlusion"), dict):
        d["occlusion"] = _occlusion_from_dict(d["occlusion"])
    try:
        return SynthSpec(**d)
    except TypeError as exc:
        raise InvalidSpec(str(exc)) from exc


def load_spec(path) -> SynthSpec:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"spec is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidSpec("spec JSON must be an object")
    return spec_from_dict(raw)


# --- classifier ---

def best_buddy_classifier(obj: StructuredPointCloud, scene: SceneField,
                          threshold: float = DEFAULT_BB_THRESHOLD,
                          c_min: float = DEFAULT_C_MIN) -> ClassifierField:
    """Mutual-nearest-descriptor classifier over Regular voxels.

    A voxel is positive iff it and some object point are each other's most
    similar match (ties to the lowest index) and that similarity clears
    the threshold. Positive voxels store log-probability 0, the rest the
    floor c_min.
    """
    lin = scene.regular_linear_indices()
    if lin.size == 0:
        raise NoRegularVoxels("scene has no Regular voxels")
    zv = scene.descriptors[lin]                # (M, d)
    sims = zv @ obj.descriptors.T              # (M, N)
    best_voxel_of_point = np.argmax(sims, axis=0)
    best_point_of_voxel = np.argmax(sims, axis=1)
    m_idx = np.arange(lin.size)
    mutual = best_voxel_of_point[best_point_of_voxel] == m_idx
    strong = sims[m_idx, best_point_of_voxel] >= threshold
    positive = mutual & strong

    values = np.full(scene.grid.n_cells, float(c_min))
    values[lin[positive]] = 0.0
    return ClassifierField(scene.grid, values, float(c_min))


# --- feature helpers ---

def _height_features(z: np.ndarray, height: float, freqs: np.ndarray,
                     phases: np.ndarray) -> np.ndarray:
    u = (z / height)[:, None]
    return normalize_rows(np.sin(2.0 * np.pi * freqs[None, :] * u + phases[None, :]))


def _surface_features(coords2: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return normalize_rows(np.sin(coords2 @ w + b[None, :]))


def _rot90_xy(pts: np.ndarray, times: int) -> np.ndarray:
    """Exact in-plane rotation by multiples of 90 degrees."""
    out = pts.copy()
    for _ in range(times % 4):
        out = np.stack([-out[:, 1], out[:, 0], out[:, 2]], axis=1)
    return out


def _dilate26(occ: np.ndarray) -> np.ndarray:
    padded = np.pad(occ, 1)
    out = np.zeros_like(occ)
    nx, ny, nz = occ.shape
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                out |= padded[1 + dx:1 + dx + nx, 1 + dy:1 + dy + ny, 1 + dz:1 + dz + nz]
    return out


def _grid_from_points(pts: np.ndarray, h: float):
    lo = pts.min(axis=0) - h
    hi = pts.max(axis=0) + h
    dims = np.maximum(np.ceil((hi - lo) / h).astype(np.int64), 1)
    return lo, dims


def _cell_centers_3d(origin: np.ndarray, h: float, dims) -> np.ndarray:
    nx, ny, nz = dims
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    idx = np.stack([ix, iy, iz], axis=-1).astype(np.float64)
    return origin + (idx + 0.5) * h   # (nx, ny, nz, 3)


def generate(spec: SynthSpec) -> SynthInstance:
    """Build object, scene field, classifier and ground truth from a spec."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "mug":
        inst = _generate_mug(spec, rng)
    elif spec.kind == "box":
        inst = _generate_box(spec, rng)
    else:
        inst = _generate_points(spec, rng)
    _check_instance(spec, inst)
    return inst


def _assemble(spec: SynthSpec, rng: np.random.Generator,
              obj: StructuredPointCloud, scene_pts: np.ndarray,
              scene_dsc: np.ndarray, occlusion, clutter_keep,
              bounds=None) -> SynthInstance:
    """Common tail: occlusion drop, clutter, masks, field, classifier."""
    h = spec.voxel_size

    if occlusion is not None:
        keep = ~occlusion.contains(scene_pts)
        scene_pts, scene_dsc = scene_pts[keep], scene_dsc[keep]

    if spec.sigma_z > 0:
        scene_dsc = normalize_rows(scene_dsc + rng.normal(scale=spec.sigma_z, size=scene_dsc.shape))

    if spec.clutter > 0:
        cl_pts, cl_dsc = _make_clutter(spec, rng, scene_pts, clutter_keep)
        scene_pts = np.vstack([scene_pts, cl_pts])
        scene_dsc = np.vstack([scene_dsc, cl_dsc])

    if bounds is None:
        origin, dims = _grid_from_points(scene_pts, h)
    else:
        origin, dims = bounds
    grid = _Grid(origin, h, dims)

    idx = grid.point_indices(scene_pts)
    occ3d = np.zeros(grid.dims, dtype=bool)
    occ3d[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    near = _dilate26(occ3d)

    centers = _cell_centers_3d(grid.origin, h, grid.dims).reshape(-1, 3)
    occluded = (occlusion.contains(centers).reshape(grid.dims)
                if occlusion is not None else np.zeros(grid.dims, dtype=bool))
    observed_empty = ~near & ~occluded

    scene = build_scene_field(
        StructuredPointCloud(scene_pts, scene_dsc), h,
        observed_empty=observed_empty, bounds=(origin, dims))
    classifier = best_buddy_classifier(obj, scene, spec.bb_threshold, spec.c_min)

    k = spec.symmetry
    group = [Pose.from_axis_angle((0.0, 0.0, 1.0), 2.0 * np.pi * m / k) for m in range(k)]
    return SynthInstance(object=obj, scene=scene, classifier=classifier,
                         gt_pose=spec.gt_pose, symmetry_group=group,
                         occlusion=occlusion)


def _make_clutter(spec: SynthSpec, rng: np.random.Generator,
                  scene_pts: np.ndarray, keep_predicate):
    h = spec.voxel_size
    lo = scene_pts.min(axis=0) - 10 * h
    hi = scene_pts.max(axis=0) + 10 * h
    pts = []
    attempts = 0
    while len(pts) < spec.clutter and attempts < 100 * spec.clutter:
        cand = lo + (hi - lo) * rng.random(3)
        attempts += 1
        if keep_predicate is None or keep_predicate(cand):
            pts.append(cand)
    pts = np.array(pts) if pts else np.empty((0, 3))
    dsc = normalize_rows(rng.normal(size=(len(pts), spec.descriptor_dim)))
    return pts, dsc


def _generate_mug(spec: SynthSpec, rng: np.random.Generator) -> SynthInstance:
    h = spec.voxel_size
    radius = spec.radius_voxels * h
    height = spec.height_voxels * h
    d = spec.descriptor_dim

    freqs = 1.0 + 7.0 * rng.random(d)
    phases = 2.0 * np.pi * rng.random(d)
    handle_dsc = normalize_rows(rng.normal(size=(1, d)))[0]

    # object: one shell at the wall middle, kept clear of the rim by 2h
    n_phi, n_z = 48, 12
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    z = np.linspace(2 * h, height - 2 * h, n_z)
    pp, zz = np.meshgrid(phi, z, indexing="ij")
    body = np.stack([radius * np.cos(pp).ravel(), radius * np.sin(pp).ravel(), zz.ravel()], axis=1)
    body_dsc = _height_features(body[:, 2], height, freqs, phases)

    handle_r = radius + 3.5 * h
    if spec.handle:
        hp, hz = np.meshgrid(np.linspace(-0.15, 0.15, 6), np.linspace(0.4 * height, 0.6 * height, 4),
                             indexing="ij")
        handle = np.stack([handle_r * np.cos(hp).ravel(), handle_r * np.sin(hp).ravel(),
                           hz.ravel()], axis=1)
        obj_pts = np.vstack([body, handle])
        obj_dsc = np.vstack([body_dsc, np.tile(handle_dsc, (handle.shape[0], 1))])
    else:
        obj_pts, obj_dsc = body, body_dsc
    obj = StructuredPointCloud(obj_pts, obj_dsc)

    # scene: thick wall sampled on a sub-voxel lattice, z fastest so voxel
    # means in the same layer accumulate identically
    step = _STEP * h
    radii = radius + np.arange(-_WALL_HALF * h, _WALL_HALF * h + 0.5 * step, step)
    zs = np.arange(0.0, height + 0.5 * step, step)
    rows = []
    for r in radii:
        m = max(8, int(math.ceil(2.0 * np.pi * r / step)))
        ph = 2.0 * np.pi * np.arange(m) / m
        for c, s in zip(np.cos(ph), np.sin(ph)):
            col = np.empty((zs.size, 3))
            col[:, 0] = r * c
            col[:, 1] = r * s
            col[:, 2] = zs
            rows.append(col)
    wall = np.concatenate(rows)
    wall_dsc = _height_features(wall[:, 2], height, freqs, phases)

    world_wall = pose_apply(spec.gt_pose, wall)
    world_obj = pose_apply(spec.gt_pose, obj_pts)

    occlusion = spec.occlusion
    if occlusion == "auto":
        axis = spec.gt_pose.trans[:2]
        z0 = spec.gt_pose.trans[2]
        occlusion = Annulus(axis_xy=axis, r_inner=radius + 1.75 * h,
                            r_outer=handle_r + 2.0 * h,
                            z_min=z0 - h, z_max=z0 + height + h)
    elif isinstance(occlusion, dict):
        occlusion = _occlusion_from_dict(occlusion)

    def clutter_ok(p):
        r = np.hypot(p[0] - spec.gt_pose.trans[0], p[1] - spec.gt_pose.trans[1])
        return r > handle_r + 3.0 * h

    # scene point set includes the (to-be-occluded) handle copy
    scene_pts = np.vstack([world_wall, world_obj[len(body):]]) if spec.handle else world_wall
    scene_dsc = (np.vstack([wall_dsc, obj_dsc[len(body):]]) if spec.handle else wall_dsc)

    return _assemble(spec, rng, obj, scene_pts, scene_dsc, occlusion, clutter_ok)


def _generate_box(spec: SynthSpec, rng: np.random.Generator) -> SynthInstance:
    h = spec.voxel_size
    a = spec.radius_voxels * h          # half-width
    height = spec.height_voxels * h
    d = spec.descriptor_dim
    k = spec.symmetry
    n_groups = 4 // k                   # independent face groups

    ws = [rng.normal(size=(2, d)) * (2.0 * np.pi / (3.0 * h)) for _ in range(n_groups)]
    bs = [2.0 * np.pi * rng.random(d) for _ in range(n_groups)]

    # object: base-wedge samples on face +x, replicated by exact 90-degree
    # maps so the point set and descriptors are bit-exactly k-fold symmetric
    n_s, n_z = 12, 8
    ss = np.linspace(-a + 2 * h, a - 2 * h, n_s)
    zz = np.linspace(2 * h, height - 2 * h, n_z)
    sg, zg = np.meshgrid(ss, zz, indexing="ij")
    base = np.stack([np.full(sg.size, a), sg.ravel(), zg.ravel()], axis=1)
    base_uv = np.stack([sg.ravel(), zg.ravel()], axis=1)

    obj_parts, obj_dscs = [], []
    for face in range(4):
        group = face % n_groups
        dsc = _surface_features(base_uv, ws[group], bs[group])
        obj_parts.append(_rot90_xy(base, face))
        obj_dscs.append(dsc)
    obj = StructuredPointCloud(np.concatenate(obj_parts), np.concatenate(obj_dscs))

    # scene: thick slabs per face, anchor descriptors taken pre-offset
    step = _STEP * h
    offs = np.arange(-_WALL_HALF * h, _WALL_HALF * h + 0.5 * step, step)
    s_dense = np.arange(-a - _WALL_HALF * h, a + _WALL_HALF * h + 0.5 * step, step)
    z_dense = np.arange(0.0, height + 0.5 * step, step)
    sg, zg = np.meshgrid(s_dense, z_dense, indexing="ij")
    anchor_uv = np.stack([sg.ravel(), zg.ravel()], axis=1)

    scene_parts, scene_dscs = [], []
    for face in range(4):
        group = face % n_groups
        dsc = _surface_features(anchor_uv, ws[group], bs[group])
        for off in offs:
            slab = np.stack([np.full(anchor_uv.shape[0], a + off),
                             anchor_uv[:, 0], anchor_uv[:, 1]], axis=1)
            scene_parts.append(_rot90_xy(slab, face))
            scene_dscs.append(dsc)
    scene_local = np.concatenate(scene_parts)
    scene_dsc = np.concatenate(scene_dscs)
    scene_pts = pose_apply(spec.gt_pose, scene_local)

    occlusion = spec.occlusion
    if occlusion == "auto":
        occlusion = None
    elif isinstance(occlusion, dict):
        occlusion = _occlusion_from_dict(occlusion)

    center = spec.gt_pose.trans

    def clutter_ok(p):
        return np.max(np.abs(p[:2] - center[:2])) > a + 4.0 * h

    return _assemble(spec, rng, obj, scene_pts, scene_dsc, occlusion, clutter_ok)


def _generate_points(spec: SynthSpec, rng: np.random.Generator) -> SynthInstance:
    """Distinct-descriptor points placed exactly at voxel centers.

    The scene holds exactly the transformed object points, one per voxel,
    so the ground-truth pose scores the structural maximum N*beta and is
    the unique global optimum. Requires a pure-translation gt_pose on the
    voxel lattice to stay grid-locked.
    """
    h = spec.voxel_size
    n = spec.n_points
    d = spec.descriptor_dim
    side = max(3, int(math.ceil((2.0 * n) ** (1.0 / 3.0))))
    linear = rng.choice(side ** 3, size=n, replace=False)
    idx = np.stack([linear % side, (linear // side) % side, linear // side ** 2], axis=1)

    local = (idx + 0.5) * h
    dsc = normalize_rows(rng.normal(size=(n, d)))
    obj = StructuredPointCloud(local, dsc)

    world = pose_apply(spec.gt_pose, local)
    # grid-locked bounds: voxel centers coincide with the world points
    origin = spec.gt_pose.trans + (idx.min(axis=0) - 1) * h
    dims = idx.max(axis=0) - idx.min(axis=0) + 3

    occlusion = None if spec.occlusion in ("auto", None) else spec.occlusion
    if isinstance(occlusion, dict):
        occlusion = _occlusion_from_dict(occlusion)

    spec_pointsafe = spec if spec.clutter == 0 else _replace_clutter(spec, 0)
    return _assemble(spec_pointsafe, rng, obj, world, dsc.copy(), occlusion, None,
                     bounds=(origin, dims))


def _replace_clutter(spec: SynthSpec, value: int) -> SynthSpec:
    from dataclasses import replace
    return replace(spec, clutter=value)


def _check_instance(spec: SynthSpec, inst: SynthInstance):
    """Post-construction invariants: placement and descriptor symmetry."""
    world = pose_apply(inst.gt_pose, inst.object.points)
    occluded = (inst.occlusion.contains(world)
                if inst.occlusion is not None else np.zeros(len(world), dtype=bool))
    grid = inst.scene.grid
    idx = grid.point_indices(world[~occluded])
    lin = grid.linear_index(idx[:, 0], idx[:, 1], idx[:, 2])
    if not np.all(inst.scene.tags[lin] == TAG_REGULAR):
        raise InvalidSpec("a non-occluded object point fell outside occupied space")

    if spec.kind == "box" and spec.symmetry > 1:
        pts, dsc = inst.object.points, inst.object.descriptors
        for m in range(1, spec.symmetry):
            rotated = _rot90_xy(pts, m * (4 // spec.symmetry))
            # match rotated points back onto the sampled set
            d2 = np.sum((rotated[:, None, :] - pts[None, :, :]) ** 2, axis=2)
            j = np.argmin(d2, axis=1)
            if np.max(d2[np.arange(len(pts)), j]) > 1e-18:
                raise InvalidSpec("box point set is not exactly symmetric")
            if not np.array_equal(dsc, dsc[j]):
                raise InvalidSpec("box descriptors are not exactly symmetric")


# --- canonical instances used by the CLI examples and the test suite ---

def canonical_mug_spec(seed: int = 7) -> SynthSpec:
    """Occluded-handle mug: height-only descriptors, classifier silent."""
    return SynthSpec(kind="mug", symmetry=8, descriptor_dim=16, sigma_z=0.0,
                     clutter=120, voxel_size=0.05,
                     gt_pose=Pose.from_axis_angle((0, 0, 1), 0.5, (0.1, -0.05, 0.0)),
                     seed=seed, radius_voxels=6.0, height_voxels=10.0,
                     handle=True, bb_threshold=1.1)


def canonical_unique_box_spec(seed: int = 3) -> SynthSpec:
    """Unique-descriptor box: every pose DOF is pinned by the features."""
    return SynthSpec(kind="box", symmetry=1, descriptor_dim=16, sigma_z=0.0,
                     clutter=40, voxel_size=0.05,
                     gt_pose=Pose.from_axis_angle((0, 0, 1), np.pi / 4.0, (0.3, 0.0, 0.0)),
                     seed=seed, radius_voxels=6.0, height_voxels=10.0)


def canonical_symmetric_box_spec(seed: int = 5) -> SynthSpec:
    """Grid-aligned box with exact 4-fold descriptor symmetry."""
    return SynthSpec(kind="box", symmetry=4, descriptor_dim=16, sigma_z=0.0,
                     clutter=0, voxel_size=0.25,
                     gt_pose=Pose(np.array([1.0, 0, 0, 0]), np.array([0.5, -0.25, 0.0])),
                     seed=seed, radius_voxels=6.0, height_voxels=10.0)


def canonical_points_spec(seed: int = 11, n_points: int = 64) -> SynthSpec:
    """Grid-locked blob of distinct-descriptor points."""
    return SynthSpec(kind="points", symmetry=1, descriptor_dim=16, sigma_z=0.0,
                     occlusion=None, clutter=0, voxel_size=0.25,
                     gt_pose=Pose(np.array([1.0, 0, 0, 0]), np.array([0.75, 0.5, -0.25])),
                     seed=seed, n_points=n_points)
