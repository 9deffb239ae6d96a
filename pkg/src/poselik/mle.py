"""Grid-approximated robust maximum-likelihood pose estimation.

The continuous objective is approximated on the centers of all Regular
voxels: each object point gets a cost row over the grid (its localization
log-density at every center), rows are converted to nonnegative softmax
correspondence weights over their top-K entries, and the resulting
weighted registration is solved with truncated least squares via
graduated non-convexity (GNC) around a weighted Kabsch/Umeyama inner
solver.

Log-probabilities are typically negative, so they cannot be used directly
as multiplicative weights on the robust cost; the per-row softmax keeps
the intended semantics (align each point to the grid cells where it is
most probably localized) while keeping the minimization well posed.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np

from . import likelihood as _lik
from .cloud import StructuredPointCloud
from .errors import NoCorrespondences, NoRegularVoxels, ZeroWeightSum
from .field import DEFAULT_C_MIN, ClassifierField, SceneField
from .se3 import Pose

DEFAULT_TOP_K = 8

# singular-value ratio below which the weighted point set counts as
# rank-deficient and free rotation DOF collapse to the identity
_RANK_TOL = 1e-9

_MU_MAX = 1.0e8


@dataclass(frozen=True)
class GridPoints:
    """Centers of all Regular voxels, deterministic x-fastest order."""

    coords: np.ndarray          # (M, 3)
    linear_indices: np.ndarray  # (M,) into the source field's cells

    @property
    def size(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class CorrespondenceSet:
    """Sparse point-to-grid candidates: row i holds up to K weighted cells.

    Weights are per-row softmax over the top-K cost entries; rows whose
    best cost is below c_min/2 are dropped entirely (the point has no
    plausible localization, e.g. it is occluded).
    """

    point_idx: np.ndarray  # (P,) object point index per pair
    grid_idx: np.ndarray   # (P,) grid row per pair
    weights: np.ndarray    # (P,) nonnegative, summing to 1 within each row

    @property
    def n_pairs(self) -> int:
        return self.point_idx.shape[0]


@dataclass(frozen=True)
class GncConfig:
    truncation: float                 # TLS threshold, length units
    mu_update_factor: float = 1.4
    max_iterations: int = 100
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.truncation <= 0:
            raise ValueError("truncation must be positive")
        if self.mu_update_factor <= 1:
            raise ValueError("mu_update_factor must exceed 1")


@dataclass
class GncResult:
    pose: Pose
    weights: np.ndarray      # final per-pair inlier weights m_ij in [0,1]
    trace: List[dict] = dc_field(default_factory=list)


def build_grid(scene: SceneField) -> GridPoints:
    """Grid points at the centers of all Regular voxels."""
    lin = scene.regular_linear_indices()
    if lin.size == 0:
        raise NoRegularVoxels("scene has no Regular voxels")
    return GridPoints(scene.grid.cell_centers(lin), lin)


def cost_matrix(obj: StructuredPointCloud, grid: GridPoints, scene: SceneField,
                cls: ClassifierField, cfg: _lik.LikelihoodConfig) -> np.ndarray:
    """(N, M) localization log-densities of point i at grid center j.

    Exact voxel-center evaluation: the stored cell descriptor and
    classifier value are used directly, no interpolation error.
    """
    zv = scene.descriptors[grid.linear_indices]          # (M, d)
    logp = np.clip(cls.values[grid.linear_indices], cls.c_min, 0.0)
    sim = obj.descriptors @ zv.T                          # (N, M)
    return logp[None, :] + cfg.beta * sim


def correspondences_from_costs(costs: np.ndarray, k: int = DEFAULT_TOP_K,
                               c_min: float = DEFAULT_C_MIN) -> CorrespondenceSet:
    """Per-row softmax weights over the top-K cost entries.

    Rows with max entry below ``c_min / 2`` are dropped as unlocalizable.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n, m = costs.shape
    k = min(k, m)
    row_max = costs.max(axis=1)
    keep = row_max >= c_min / 2.0

    pi: list = []
    gi: list = []
    wt: list = []
    for i in np.nonzero(keep)[0]:
        row = costs[i]
        if k < m:
            top = np.argpartition(row, m - k)[m - k:]
            top = top[np.argsort(row[top])[::-1]]
        else:
            top = np.argsort(row)[::-1]
        w = np.exp(row[top] - row[top[0]])
        w = w / w.sum()
        pi.append(np.full(top.shape, i, dtype=np.int64))
        gi.append(top.astype(np.int64))
        wt.append(w)

    if not pi:
        return CorrespondenceSet(
            np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0))
    return CorrespondenceSet(np.concatenate(pi), np.concatenate(gi), np.concatenate(wt))


def robust_cost(r: float, threshold: float) -> float:
    """Truncated least squares: min(r^2, threshold^2)."""
    if r < 0 or threshold <= 0:
        raise ValueError("need r >= 0 and threshold > 0")
    return float(min(r * r, threshold * threshold))


def weighted_rigid_align(src, dst, weights) -> Pose:
    """Pose minimizing sum_k w_k ||dst_k - (R src_k + t)||^2.

    Weighted-centroid + cross-covariance SVD with determinant correction;
    proper rotation always. If the weighted sources are coincident or
    collinear, the unconstrained rotation DOF resolve to the identity
    (coincident: R = I; collinear: the minimal rotation taking the source
    direction onto the destination direction, no twist about it).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if src.shape != dst.shape or src.shape[0] != w.shape[0] or src.shape[0] == 0:
        raise ValueError("src, dst and weights must have equal nonzero length")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    wsum = w.sum()
    if wsum <= 0:
        raise ZeroWeightSum("weights sum to zero")

    cs = (w[:, None] * src).sum(axis=0) / wsum
    cd = (w[:, None] * dst).sum(axis=0) / wsum
    ps = src - cs
    pd = dst - cd
    h = (w[:, None] * ps).T @ pd  # 3x3 cross-covariance

    u, s, vt = np.linalg.svd(h)
    scale = max(s[0], 1e-300)
    if s[0] <= _RANK_TOL * max(1.0, float(np.sqrt(wsum))) * max(
            1.0, float(np.abs(ps).max(initial=0.0)) * float(np.abs(pd).max(initial=0.0))):
        rot = np.eye(3)
    elif s[1] <= _RANK_TOL * scale:
        # rank one: rotate the source principal direction onto the
        # destination one along the shortest arc
        rot = _minimal_rotation(u[:, 0], vt[0])
    else:
        dsign = np.sign(np.linalg.det(vt.T @ u.T))
        rot = vt.T @ np.diag([1.0, 1.0, dsign]) @ u.T

    t = cd - rot @ cs
    return Pose(_mat_to_quat(rot), t)


def _minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation taking unit vector a to unit vector b."""
    c = float(np.dot(a, b))
    v = np.cross(a, b)
    s = np.linalg.norm(v)
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # opposite: rotate by pi about any axis orthogonal to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-12:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        k = _skew(axis)
        return np.eye(3) + 2.0 * k @ k
    k = _skew(v / s)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _mat_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to wxyz quaternion (Shepperd's branching)."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        return np.array([0.25 * s,
                         (m[2, 1] - m[1, 2]) / s,
                         (m[0, 2] - m[2, 0]) / s,
                         (m[1, 0] - m[0, 1]) / s])
    i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
    if i == 0:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        return np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                         (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    if i == 1:
        s = np.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2.0
        return np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                         0.25 * s, (m[1, 2] + m[2, 1]) / s])
    s = np.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2.0
    return np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                     (m[1, 2] + m[2, 1]) / s, 0.25 * s])


def _tls_weights(r2: np.ndarray, mu: float, bar2: float) -> np.ndarray:
    """Standard GNC-TLS surrogate weights, clamped into [0, 1]."""
    hi = (mu + 1.0) / mu * bar2
    lo = mu / (mu + 1.0) * bar2
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = np.sqrt(bar2 * mu * (mu + 1.0) / np.maximum(r2, 1e-300)) - mu
    m = np.where(r2 >= hi, 0.0, np.where(r2 <= lo, 1.0, mid))
    return np.clip(m, 0.0, 1.0)


def _surrogate_value(r2: np.ndarray, m: np.ndarray, w: np.ndarray,
                     mu: float, bar2: float) -> float:
    """Black-Rangarajan surrogate the alternation actually minimizes."""
    pen = mu * (1.0 - m) / (m + mu) * bar2
    return float(np.sum(w * (m * r2 + pen)))


def gnc_solve(obj: StructuredPointCloud, grid: GridPoints,
              corr: CorrespondenceSet, cfg: GncConfig,
              init: Optional[Pose] = None) -> GncResult:
    """Truncated-least-squares registration via graduated non-convexity.

    Alternates the weighted rigid alignment (combined weights w_ij * m_ij)
    with the GNC-TLS weight update, raising mu by ``mu_update_factor``
    each outer iteration until the surrogate weights stabilize. For each
    iteration the surrogate objective is logged before and after the
    alignment at that iteration's mu, so monotonicity per mu stage is
    checkable from the trace. Deterministic.
    """
    if corr.n_pairs == 0:
        raise NoCorrespondences("correspondence set is empty")

    src = obj.points[corr.point_idx]
    dst = grid.coords[corr.grid_idx]
    w = corr.weights
    bar2 = cfg.truncation * cfg.truncation

    pose = init if init is not None else weighted_rigid_align(src, dst, w)
    r2 = _residuals_sq(src, dst, pose)

    r2max = float(r2.max())
    denom = 2.0 * r2max - bar2
    mu = bar2 / denom if denom > 0 else _MU_MAX
    mu = float(np.clip(mu, 1e-6, _MU_MAX))

    m_prev = np.ones_like(w)
    trace: List[dict] = []
    for it in range(cfg.max_iterations):
        m = _tls_weights(r2, mu, bar2)
        j_pre = _surrogate_value(r2, m, w, mu, bar2)
        cw = w * m
        if cw.sum() <= 1e-12:
            trace.append({"iter": it, "mu": mu, "j_pre": j_pre, "j_post": j_pre,
                          "tls": float(np.sum(w * np.minimum(r2, bar2)))})
            break
        pose = weighted_rigid_align(src, dst, cw)
        r2 = _residuals_sq(src, dst, pose)
        j_post = _surrogate_value(r2, m, w, mu, bar2)
        trace.append({
            "iter": it, "mu": mu, "j_pre": j_pre, "j_post": j_post,
            "tls": float(np.sum(w * np.minimum(r2, bar2))),
        })
        delta = float(np.abs(m - m_prev).max())
        m_prev = m
        if it > 0 and delta < cfg.convergence_tol:
            break
        mu = min(mu * cfg.mu_update_factor, _MU_MAX)

    return GncResult(pose=pose, weights=m_prev, trace=trace)


def _residuals_sq(src: np.ndarray, dst: np.ndarray, pose: Pose) -> np.ndarray:
    diff = dst - (src @ pose.rotation_matrix().T + pose.trans)
    return np.einsum("ij,ij->i", diff, diff)


@dataclass(frozen=True)
class MleConfig:
    likelihood: _lik.LikelihoodConfig
    gnc: Optional[GncConfig] = None   # None: truncation defaults to voxel_size
    top_k: int = DEFAULT_TOP_K


def mle_estimate(obj: StructuredPointCloud, scene: SceneField,
                 cls: ClassifierField, cfg: MleConfig) -> Pose:
    """Grid -> cost matrix -> correspondences -> GNC, with identity fallback.

    The returned pose never scores below the identity initialization under
    the floored optimizer objective.
    """
    grid = build_grid(scene)
    costs = cost_matrix(obj, grid, scene, cls, cfg.likelihood)
    corr = correspondences_from_costs(costs, cfg.top_k, c_min=cls.c_min)
    if corr.n_pairs == 0:
        raise NoCorrespondences("no object point has a plausible localization")
    gnc_cfg = cfg.gnc or GncConfig(truncation=scene.voxel_size)
    result = gnc_solve(obj, grid, corr, gnc_cfg)

    ident = Pose.identity()
    score = _lik.objective_for_optimizer(obj, result.pose, scene, cls, cfg.likelihood)
    base = _lik.objective_for_optimizer(obj, ident, scene, cls, cfg.likelihood)
    return result.pose if score >= base else ident
