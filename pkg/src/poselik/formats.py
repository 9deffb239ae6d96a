"""Binary file formats (little-endian throughout) and pose JSON helpers.

SPCL v1  structured pointcloud: magic "SPC1"; u32 N; u32 d; u8 normalize
         flag; N records of (3+d) f32: x,y,z then the descriptor.
SVOL v1  scene volume: magic "SVL1"; u32 nx,ny,nz; f32 origin xyz; f32
         voxel_size; u32 d; nx*ny*nz fixed-stride cells in x-fastest
         order, each u8 tag (0=Empty, 1=Null, 2=Regular) + d f32 (zeros
         when tag != 2).
PCLS v1  classifier: magic "PCL1"; u32 nx,ny,nz; f32 origin xyz; f32
         voxel_size; f32 c_min; nx*ny*nz f32 log-probabilities.

Readers validate magic, declared sizes and value domains before any large
allocation, so malformed input fails with a typed error instead of
crashing.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .cloud import StructuredPointCloud, normalize_rows
from .errors import (BadMagic, EmptyInput, GeometryMismatch, NonFiniteValue,
                     TruncatedPayload)
from .field import (TAG_EMPTY, TAG_NULL, TAG_REGULAR, ClassifierField,
                    SceneField, _Grid, same_geometry)
from .se3 import Pose

MAGIC_SPCL = b"SPC1"
MAGIC_SVOL = b"SVL1"
MAGIC_PCLS = b"PCL1"

_MAX_POINTS = 50_000_000
_MAX_CELLS = 500_000_000


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedPayload(
                f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def f32_array(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float64)

    def expect_magic(self, magic: bytes):
        if len(self.data) < 4:
            raise TruncatedPayload("file shorter than the magic")
        got = self.take(4)
        if got != magic:
            raise BadMagic(f"expected {magic!r}, found {got!r}")

    def done(self):
        if self.pos != len(self.data):
            raise TruncatedPayload(
                f"{len(self.data) - self.pos} unexpected trailing bytes")


def save_object(obj: StructuredPointCloud, path, normalize_flag: bool = False):
    n, d = obj.size, obj.descriptor_dim
    rec = np.hstack([obj.points, obj.descriptors]).astype("<f4")
    with open(path, "wb") as f:
        f.write(MAGIC_SPCL)
        f.write(struct.pack("<IIB", n, d, 1 if normalize_flag else 0))
        f.write(rec.tobytes())


def load_object(path) -> StructuredPointCloud:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    r.expect_magic(MAGIC_SPCL)
    n, d = r.u32(), r.u32()
    flag = r.u8()
    if n == 0:
        raise EmptyInput("object file declares zero points")
    if d == 0 or n > _MAX_POINTS or n * (3 + d) > _MAX_POINTS * 8:
        raise NonFiniteValue(f"implausible header: N={n}, d={d}")
    rec = r.f32_array(n * (3 + d)).reshape(n, 3 + d)
    r.done()
    pts, dsc = rec[:, :3], rec[:, 3:]
    if not np.all(np.isfinite(rec)):
        raise NonFiniteValue("object payload contains non-finite values")
    if flag:
        norms = np.linalg.norm(dsc, axis=1)
        if np.any(norms == 0):
            raise NonFiniteValue("cannot normalize zero descriptor")
        dsc = normalize_rows(dsc)
    try:
        return StructuredPointCloud(pts, dsc)
    except ValueError as exc:
        raise NonFiniteValue(str(exc)) from exc


def save_scene(scene: SceneField, path):
    d = scene.descriptor_dim
    cell_dtype = np.dtype([("tag", "<u1"), ("vec", "<f4", (d,))])
    cells = np.zeros(scene.grid.n_cells, dtype=cell_dtype)
    cells["tag"] = scene.tags
    reg = scene.tags == TAG_REGULAR
    cells["vec"][reg] = scene.descriptors[reg].astype("<f4")
    nx, ny, nz = scene.dims
    with open(path, "wb") as f:
        f.write(MAGIC_SVOL)
        f.write(struct.pack("<III", nx, ny, nz))
        f.write(struct.pack("<fff", *scene.origin.astype(np.float32)))
        f.write(struct.pack("<f", np.float32(scene.voxel_size)))
        f.write(struct.pack("<I", d))
        f.write(cells.tobytes())


def load_scene(path) -> SceneField:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    r.expect_magic(MAGIC_SVOL)
    nx, ny, nz = r.u32(), r.u32(), r.u32()
    origin = np.array([r.f32(), r.f32(), r.f32()])
    voxel = r.f32()
    d = r.u32()
    ncells = nx * ny * nz
    if ncells == 0 or d == 0 or ncells > _MAX_CELLS or ncells * (1 + 4 * d) > 8 * _MAX_CELLS:
        raise NonFiniteValue(f"implausible header: dims=({nx},{ny},{nz}), d={d}")
    if not np.all(np.isfinite(origin)) or not np.isfinite(voxel) or voxel <= 0:
        raise NonFiniteValue("grid origin/voxel_size invalid")
    cell_dtype = np.dtype([("tag", "<u1"), ("vec", "<f4", (d,))])
    raw = r.take(ncells * cell_dtype.itemsize)
    r.done()
    cells = np.frombuffer(raw, dtype=cell_dtype, count=ncells)
    tags = cells["tag"].astype(np.uint8)
    if np.any(tags > TAG_REGULAR):
        raise NonFiniteValue("unknown cell tag")
    vecs = cells["vec"].astype(np.float64)
    if not np.all(np.isfinite(vecs)):
        raise NonFiniteValue("scene payload contains non-finite values")
    vecs[tags != TAG_REGULAR] = 0.0
    reg = tags == TAG_REGULAR
    if np.any(np.abs(np.linalg.norm(vecs[reg], axis=1) - 1.0) > 1e-4):
        raise NonFiniteValue("Regular descriptors must be unit-norm")
    return SceneField(_Grid(origin, voxel, (nx, ny, nz)), tags, vecs)


def save_classifier(cls: ClassifierField, path):
    nx, ny, nz = cls.dims
    with open(path, "wb") as f:
        f.write(MAGIC_PCLS)
        f.write(struct.pack("<III", nx, ny, nz))
        f.write(struct.pack("<fff", *cls.origin.astype(np.float32)))
        f.write(struct.pack("<f", np.float32(cls.voxel_size)))
        f.write(struct.pack("<f", np.float32(cls.c_min)))
        f.write(cls.values.astype("<f4").tobytes())


def load_classifier(path) -> ClassifierField:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    r.expect_magic(MAGIC_PCLS)
    nx, ny, nz = r.u32(), r.u32(), r.u32()
    origin = np.array([r.f32(), r.f32(), r.f32()])
    voxel = r.f32()
    c_min = r.f32()
    ncells = nx * ny * nz
    if ncells == 0 or ncells > _MAX_CELLS:
        raise NonFiniteValue(f"implausible header: dims=({nx},{ny},{nz})")
    if not np.all(np.isfinite(origin)) or not np.isfinite(voxel) or voxel <= 0:
        raise NonFiniteValue("grid origin/voxel_size invalid")
    if not np.isfinite(c_min) or c_min >= 0:
        raise NonFiniteValue("c_min must be finite and negative")
    vals = r.f32_array(ncells)
    r.done()
    if not np.all(np.isfinite(vals)):
        raise NonFiniteValue("classifier payload contains non-finite values")
    if np.any(vals > 0) or np.any(vals < c_min):
        raise NonFiniteValue("classifier values must lie in [c_min, 0]")
    return ClassifierField(_Grid(origin, voxel, (nx, ny, nz)), vals, float(c_min))


def check_paired(scene: SceneField, cls: ClassifierField):
    if not same_geometry(scene, cls):
        raise GeometryMismatch("scene and classifier grids differ")


# --- pose JSON ---

def pose_to_dict(p: Pose) -> dict:
    q, t = p.quat, p.trans
    return {"qw": q[0], "qx": q[1], "qy": q[2], "qz": q[3],
            "tx": t[0], "ty": t[1], "tz": t[2]}


def pose_from_dict(d: dict) -> Pose:
    q = np.array([d["qw"], d["qx"], d["qy"], d["qz"]], dtype=np.float64)
    t = np.array([d.get("tx", 0.0), d.get("ty", 0.0), d.get("tz", 0.0)], dtype=np.float64)
    if np.linalg.norm(q) <= 1e-12:
        raise ValueError("pose JSON quaternion is degenerate")
    return Pose(q, t)


def load_pose(path_or_json: str) -> Pose:
    s = str(path_or_json)
    if s.lstrip().startswith("{"):
        return pose_from_dict(json.loads(s))
    with open(s) as f:
        return pose_from_dict(json.load(f))
