"""Rigid-body poses as unit quaternion (wxyz) + translation.

Conventions
-----------
- Quaternions use (w, x, y, z) ordering and are kept at unit norm with a
  canonical sign: w >= 0, and if w == 0 the first nonzero of (x, y, z)
  is made nonnegative, so every rotation has a unique representative.
- The flat 7-vector parameterization is (qw, qx, qy, qz, tx, ty, tz);
  decoding renormalizes the quaternion, which keeps mutation/crossover in
  raw R^7 well defined for the optimizers.
- Euler angles are a derived read-only view in Z-Y-X order
  (yaw about z, then pitch about y, then roll about x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateQuaternion

# Quaternions with |norm^2 - 1| below this are treated as already unit so
# that decode(encode(p)) is bit-exact.
_UNIT_TOL = 1e-13


def _canonicalize(q: np.ndarray) -> np.ndarray:
    n2 = float(np.dot(q, q))
    if abs(n2 - 1.0) > _UNIT_TOL:
        q = q / np.sqrt(n2)
    w, x, y, z = q
    if w < 0.0 or (w == 0.0 and (x < 0.0 or (x == 0.0 and (y < 0.0 or (y == 0.0 and z < 0.0))))):
        q = -q
    return q


@dataclass(frozen=True)
class Pose:
    """Immutable rigid transform: x -> R x + t."""

    quat: np.ndarray   # (4,) wxyz, unit, canonical sign
    trans: np.ndarray  # (3,)

    def __post_init__(self):
        q = _canonicalize(np.asarray(self.quat, dtype=np.float64))
        t = np.array(self.trans, dtype=np.float64)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle: float, trans=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * angle
        q = np.concatenate(([np.cos(half)], np.sin(half) * axis))
        return Pose(q, np.asarray(trans, dtype=np.float64))

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        xx, yy, zz = x * x, y * y, z * z
        wx, wy, wz = w * x, w * y, w * z
        xy, xz, yz = x * y, x * z, y * z
        return np.array([
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ])


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by + ay * bw + az * bx - ax * bz,
        aw * bz + az * bw + ax * by - ay * bx,
    ])


def _quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def pose_apply(pose: Pose, points) -> np.ndarray:
    """Apply q_i = R p_i + t to every point, order preserved."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = pts @ pose.rotation_matrix().T + pose.trans
    return out[0] if single else out


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a."""
    q = _quat_mul(a.quat, b.quat)
    t = pose_apply(a, b.trans)
    return Pose(q, t)


def pose_inverse(p: Pose) -> Pose:
    qc = _quat_conj(p.quat)
    rt = Pose(qc, np.zeros(3))
    return Pose(qc, -pose_apply(rt, p.trans))


def pose_to_vector(p: Pose) -> np.ndarray:
    """Canonical flat (qw,qx,qy,qz,tx,ty,tz) form."""
    return np.concatenate([p.quat, p.trans])


def pose_from_vector(v) -> Pose:
    """Decode a flat 7-vector, renormalizing the quaternion part.

    Raises DegenerateQuaternion when the quaternion norm is <= 1e-12.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (7,):
        raise ValueError(f"pose vector must have 7 entries, got shape {v.shape}")
    q = v[:4]
    if np.linalg.norm(q) <= 1e-12:
        raise DegenerateQuaternion("quaternion part has norm <= 1e-12")
    return Pose(q, v[4:])


def rotation_distance(a: Pose, b: Pose) -> float:
    """Geodesic angle between the two rotations, in [0, pi]."""
    d = _quat_mul(a.quat, _quat_conj(b.quat))
    return 2.0 * np.arctan2(np.linalg.norm(d[1:]), abs(d[0]))


def translation_distance(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.trans - b.trans))


def euler_zyx(p: Pose):
    """(roll, pitch, yaw) of the rotation, Z-Y-X convention.

    yaw about z is applied first in the matrix product Rz*Ry*Rx; provided
    for reporting only (pose math stays in quaternions).
    """
    m = p.rotation_matrix()
    sp = -m[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = np.arcsin(sp)
    if abs(sp) < 1.0 - 1e-12:
        roll = np.arctan2(m[2, 1], m[2, 2])
        yaw = np.arctan2(m[1, 0], m[0, 0])
    else:
        # gimbal lock: fold the free DOF into roll
        roll = np.arctan2(-m[1, 2], m[1, 1])
        yaw = 0.0
    return float(roll), float(pitch), float(yaw)
