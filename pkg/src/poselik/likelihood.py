"""Pose log-likelihood of a descriptor-bearing object against a scene.

For a single transformed point q with descriptor z the localization
log-density is ``log p_O(q) + beta * sim(f_scn(q), z)`` (the constant
normalizer is dropped throughout). An object pose scores the sum over its
points; one point in observed-empty space makes the whole pose -inf.

Everything here is pure: fields are immutable, scratch buffers per call,
so callers are free to evaluate many poses concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import field as _field
from .cloud import StructuredPointCloud
from .field import NEG_INF, ClassifierField, SceneField
from .se3 import Pose

DEFAULT_BETA = 10.0
DEFAULT_LOG_FLOOR = -1.0e9


@dataclass(frozen=True)
class LikelihoodConfig:
    """Temperature and the finite stand-in for -inf.

    ``log_floor`` must stay strictly below every feasible score, i.e.
    <= N * (c_min - beta) for any object it is used with; this is checked
    where the floor is applied.
    """

    beta: float = DEFAULT_BETA
    log_floor: float = DEFAULT_LOG_FLOOR

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not self.log_floor < 0:
            raise ValueError("log_floor must be negative")


def point_log_loc(q, z, scene: SceneField, cls: ClassifierField,
                  cfg: LikelihoodConfig) -> float:
    """Log localization density of one point; -inf in observed-empty space."""
    d = _field.query_descriptor(scene, q)
    if d.is_empty:
        return NEG_INF
    s = _field.similarity(d, z)
    return _field.query_classifier(cls, q) + cfg.beta * s


def object_log_likelihood(obj: StructuredPointCloud, pose: Pose,
                          scene: SceneField, cls: ClassifierField,
                          cfg: LikelihoodConfig) -> float:
    """Sum of point log-densities at the transformed points (vectorized)."""
    q = obj.points @ pose.rotation_matrix().T + pose.trans
    sim, empty = _field.batch_similarity(scene, q, obj.descriptors)
    if np.any(empty):
        return NEG_INF
    logp = _field.batch_classifier(cls, q)
    return float(np.sum(logp) + cfg.beta * np.sum(sim))


def object_log_likelihood_many(obj: StructuredPointCloud, poses: Sequence[Pose],
                               scene: SceneField, cls: ClassifierField,
                               cfg: LikelihoodConfig,
                               chunk_points: int = 200_000) -> np.ndarray:
    """log-likelihoods for many poses in one pass, -inf entries included.

    Poses are batched so that at most ``chunk_points`` transformed points
    are in flight at a time.
    """
    n = obj.size
    out = np.empty(len(poses))
    per_chunk = max(1, chunk_points // max(n, 1))
    for start in range(0, len(poses), per_chunk):
        batch = poses[start:start + per_chunk]
        pts = np.concatenate([
            obj.points @ p.rotation_matrix().T + p.trans for p in batch
        ])
        sim, empty = _field.batch_similarity(scene, pts, np.tile(obj.descriptors, (len(batch), 1)))
        logp = _field.batch_classifier(cls, pts)
        terms = (logp + cfg.beta * sim).reshape(len(batch), n)
        vals = terms.sum(axis=1)
        vals[empty.reshape(len(batch), n).any(axis=1)] = NEG_INF
        out[start:start + per_chunk] = vals
    return out


def objective_for_optimizer(obj: StructuredPointCloud, pose: Pose,
                            scene: SceneField, cls: ClassifierField,
                            cfg: LikelihoodConfig) -> float:
    """object_log_likelihood with -inf mapped to the finite log_floor.

    Guarantees a finite total ordering for gradient-free optimizers while
    keeping every infeasible pose strictly below every feasible one.
    """
    _check_floor(obj.size, cls.c_min, cfg)
    v = object_log_likelihood(obj, pose, scene, cls, cfg)
    return cfg.log_floor if v == NEG_INF else v


def _check_floor(n_points: int, c_min: float, cfg: LikelihoodConfig):
    if cfg.log_floor > n_points * (c_min - cfg.beta):
        raise ValueError(
            f"log_floor={cfg.log_floor} is not below the feasible minimum "
            f"N*(c_min-beta)={n_points * (c_min - cfg.beta)}"
        )
