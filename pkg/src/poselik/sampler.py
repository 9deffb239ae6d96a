"""Particle representation of the pose distribution.

Two-point differential evolution provides the global search (mutation in
raw 7-vector pose space against the current best, two-point crossover,
greedy selection), random-walk Metropolis is available as the classical
alternative, and importance resampling with systematic draws turns either
output into an unweighted particle approximation. Per-coordinate
marginals come from Gaussian KDE with Scott's-rule bandwidth, wrapped
onto [-pi, pi) for angular coordinates.

All randomness is owned per-operation and derived from the explicit seed;
there is no global RNG state and outputs are reproducible bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import likelihood as _lik
from . import mle as _mle
from .cloud import StructuredPointCloud
from .errors import (AllInfeasible, InfeasibleInit, InvalidBounds,
                     NoCorrespondences, NoRegularVoxels, TooFewSamples)
from .field import NEG_INF, ClassifierField, SceneField
from .se3 import Pose, euler_zyx, pose_compose, pose_from_vector, pose_to_vector

COORDINATES = ("tx", "ty", "tz", "roll", "pitch", "yaw")
CIRCULAR = {"roll", "pitch", "yaw"}

KDE_GRID_SIZE = 512
_KDE_WRAP_IMAGES = 3


@dataclass
class ParticleSet:
    """Pose hypotheses with log-likelihoods and optional importance weights."""

    poses: List[Pose]
    log_liks: np.ndarray               # extended-real, -inf for infeasible
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.log_liks = np.asarray(self.log_liks, dtype=np.float64)
        if len(self.poses) != self.log_liks.shape[0] or len(self.poses) == 0:
            raise ValueError("poses and log_liks must have equal nonzero length")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != self.log_liks.shape:
                raise ValueError("weights must match particle count")

    @property
    def size(self) -> int:
        return len(self.poses)

    def translations(self) -> np.ndarray:
        return np.array([p.trans for p in self.poses])

    def euler_angles(self) -> np.ndarray:
        """(n, 3) roll/pitch/yaw view of the particle rotations."""
        return np.array([euler_zyx(p) for p in self.poses])

    def coordinate(self, name: str) -> np.ndarray:
        if name not in COORDINATES:
            raise ValueError(f"unknown coordinate {name!r}")
        i = COORDINATES.index(name)
        return self.translations()[:, i] if i < 3 else self.euler_angles()[:, i - 3]


@dataclass(frozen=True)
class DeConfig:
    translation_bounds: Tuple[np.ndarray, np.ndarray]  # (lo, hi), scene AABB
    population_size: int = 64
    generations: int = 300
    differential_weight: float = 0.8
    crossover_rate: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 4:
            raise ValueError("two-point DE needs population_size >= 4")
        if not 0.0 < self.differential_weight < 2.0:
            raise ValueError("differential_weight must be in (0, 2)")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must be in [0, 1]")
        lo = np.asarray(self.translation_bounds[0], dtype=np.float64)
        hi = np.asarray(self.translation_bounds[1], dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,) or not np.all(np.isfinite(lo)) \
                or not np.all(np.isfinite(hi)) or np.any(lo >= hi):
            raise InvalidBounds("translation bounds must be finite with lo < hi")
        object.__setattr__(self, "translation_bounds", (lo, hi))


@dataclass(frozen=True)
class McmcConfig:
    steps: int
    sigma_t: float
    sigma_r: float
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.sigma_t <= 0 or self.sigma_r <= 0:
            raise ValueError("proposal sigmas must be positive")


@dataclass(frozen=True)
class MarginalDensity:
    coordinate: str
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    circular: bool


def _random_pose_vector(rng: np.random.Generator, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    t = lo + (hi - lo) * rng.random(3)
    return np.concatenate([q, t])


def _decode(vec: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Optional[Pose]:
    v = vec.copy()
    v[4:] = np.clip(v[4:], lo, hi)  # keep translations inside the search box
    if np.linalg.norm(v[:4]) <= 1e-12:
        return None
    return pose_from_vector(v)


def de_sample(objective: Callable[[Pose], float], cfg: DeConfig,
              init: Optional[Pose] = None) -> ParticleSet:
    """Two-point differential evolution over the flat pose parameterization.

    Per generation, every member gets a mutant ``best + F * (d1 - d2)``
    from two distinct random donors, recombined by two-point crossover and
    kept only if it does not score worse. The objective must be finite
    everywhere (use the floored optimizer objective). Returns the final
    population; deterministic given the seed.
    """
    lo, hi = cfg.translation_bounds
    rng = np.random.default_rng(cfg.seed)

    vecs = np.array([_random_pose_vector(rng, lo, hi) for _ in range(cfg.population_size)])
    if init is not None:
        vecs[0] = pose_to_vector(init)
    poses = [_decode(v, lo, hi) for v in vecs]
    scores = np.array([objective(p) for p in poses])

    n = cfg.population_size
    for _ in range(cfg.generations):
        best = int(np.argmax(scores))
        best_vec = vecs[best].copy()
        for i in range(n):
            r1 = int(rng.integers(n - 1))
            r1 += r1 >= i
            r2 = int(rng.integers(n - 1))
            r2 += r2 >= i
            while r2 == r1:
                r2 = int(rng.integers(n - 1))
                r2 += r2 >= i
            mutant = best_vec + cfg.differential_weight * (vecs[r1] - vecs[r2])

            # two-point (modular segment) crossover: copy a contiguous run
            # of mutant genes whose length is governed by the crossover rate
            trial = vecs[i].copy()
            j = int(rng.integers(7))
            copied = 0
            while True:
                trial[j] = mutant[j]
                copied += 1
                j = (j + 1) % 7
                if copied >= 7 or rng.random() >= cfg.crossover_rate:
                    break

            candidate = _decode(trial, lo, hi)
            if candidate is None:
                continue
            s = objective(candidate)
            if s >= scores[i]:
                vecs[i] = trial
                poses[i] = candidate
                scores[i] = s

    return ParticleSet(poses=list(poses), log_liks=scores)


def mcmc_sample(log_density: Callable[[Pose], float], cfg: McmcConfig,
                init: Pose) -> ParticleSet:
    """Random-walk Metropolis over poses.

    Proposes a Gaussian translation step plus a rotation about a uniform
    random axis by |N(0, sigma_r)|; accepts with min(1, exp(delta)).
    Proposals with -inf density are always rejected. The returned chain
    has exactly ``cfg.steps`` states.
    """
    current = init
    cur_ld = log_density(init)
    if cur_ld == NEG_INF:
        raise InfeasibleInit("initial pose has zero density")

    rng = np.random.default_rng(cfg.seed)
    poses: List[Pose] = []
    lds = np.empty(cfg.steps)
    for step in range(cfg.steps):
        dt = rng.normal(scale=cfg.sigma_t, size=3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = abs(rng.normal(scale=cfg.sigma_r))
        perturb = Pose.from_axis_angle(axis, angle, dt)
        proposal = pose_compose(perturb, current)

        prop_ld = log_density(proposal)
        u = 1.0 - rng.random()  # in (0, 1]; log(u) <= 0 so uphill always accepted
        if prop_ld > NEG_INF and math.log(u) <= prop_ld - cur_ld:
            current, cur_ld = proposal, prop_ld
        poses.append(current)
        lds[step] = cur_ld

    return ParticleSet(poses=poses, log_liks=lds)


def particle_weights(log_liks: np.ndarray) -> np.ndarray:
    """Normalized importance weights; -inf gets exactly zero weight."""
    ll = np.asarray(log_liks, dtype=np.float64)
    finite = ll > NEG_INF
    if not np.any(finite):
        raise AllInfeasible("every particle is infeasible")
    w = np.zeros_like(ll)
    w[finite] = np.exp(ll[finite] - ll[finite].max())
    return w / w.sum()


def importance_resample(p: ParticleSet, count: int, seed: int = 0) -> ParticleSet:
    """Systematic resampling with replacement into ``count`` particles.

    Weights are proportional to exp(log_lik - max log_lik) with infeasible
    particles at exactly zero; the output is uniformly weighted 1/count.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    w = particle_weights(p.log_liks)
    rng = np.random.default_rng(seed)
    positions = (np.arange(count) + rng.random()) / count
    cum = np.cumsum(w)
    cum[-1] = 1.0
    chosen = np.searchsorted(cum, positions, side="left")
    return ParticleSet(
        poses=[p.poses[i] for i in chosen],
        log_liks=p.log_liks[chosen],
        weights=np.full(count, 1.0 / count),
    )


def effective_sample_size(p: ParticleSet) -> float:
    """1 / sum(w^2): particle-degeneracy diagnostic in [1, n]."""
    if p.weights is None:
        raise ValueError("particle set has no weights")
    return float(1.0 / np.sum(p.weights ** 2))


def kde_marginal(samples, coordinate: str, circular: bool,
                 bandwidth: Optional[float] = None,
                 grid_size: int = KDE_GRID_SIZE) -> MarginalDensity:
    """Gaussian KDE of one pose coordinate.

    Bandwidth defaults to Scott's rule ``std * n**(-1/5)``. Circular
    coordinates are wrapped onto [-pi, pi) by summing over the +-2*pi
    kernel images (3 each side); linear ones are evaluated on the data
    range padded by three bandwidths so the density integrates to ~1.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.shape[0] < 2:
        raise TooFewSamples("KDE needs at least 2 samples")
    n = x.shape[0]

    if circular:
        x = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
    if bandwidth is None:
        bandwidth = float(np.std(x, ddof=1)) * n ** (-0.2)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive (all samples identical?)")

    if circular:
        grid = -np.pi + 2.0 * np.pi * np.arange(grid_size) / grid_size
        offsets = 2.0 * np.pi * np.arange(-_KDE_WRAP_IMAGES, _KDE_WRAP_IMAGES + 1)
        dens = np.zeros(grid_size)
        for off in offsets:
            diff = (grid[:, None] - (x[None, :] + off)) / bandwidth
            dens += np.exp(-0.5 * diff * diff).sum(axis=1)
        dens /= n * bandwidth * np.sqrt(2.0 * np.pi)
    else:
        lo = x.min() - 3.0 * bandwidth
        hi = x.max() + 3.0 * bandwidth
        grid = np.linspace(lo, hi, grid_size)
        diff = (grid[:, None] - x[None, :]) / bandwidth
        dens = np.exp(-0.5 * diff * diff).sum(axis=1) / (n * bandwidth * np.sqrt(2.0 * np.pi))

    return MarginalDensity(coordinate=coordinate, grid=grid, density=dens,
                           bandwidth=float(bandwidth), circular=circular)


@dataclass(frozen=True)
class EstimateConfig:
    """Settings bundle for the full estimate pipeline."""

    likelihood: _lik.LikelihoodConfig
    de: DeConfig
    particles: int = 10_000
    use_mle_init: bool = True
    mle: Optional[_mle.MleConfig] = None


@dataclass
class EstimateResult:
    particles: ParticleSet
    marginals: List[MarginalDensity]
    mle_pose: Optional[Pose] = None
    stage_seconds: dict = dc_field(default_factory=dict)


def estimate_distribution(obj: StructuredPointCloud, scene: SceneField,
                          cls: ClassifierField, cfg: EstimateConfig) -> EstimateResult:
    """MLE-seeded DE search, importance resampling, KDE marginals.

    The MLE seed is best-effort: scenes where no point is localizable
    (e.g. a fully symmetric object whose classifier never fired) fall back
    to unseeded DE, mirroring how the sampler converges from random
    initialization anyway.
    """
    import time

    stage_seconds = {}
    init = None
    if cfg.use_mle_init:
        t0 = time.perf_counter()
        try:
            mle_cfg = cfg.mle or _mle.MleConfig(likelihood=cfg.likelihood)
            init = _mle.mle_estimate(obj, scene, cls, mle_cfg)
        except (NoCorrespondences, NoRegularVoxels):
            init = None
        stage_seconds["mle"] = time.perf_counter() - t0

    def objective(p: Pose) -> float:
        return _lik.objective_for_optimizer(obj, p, scene, cls, cfg.likelihood)

    t0 = time.perf_counter()
    population = de_sample(objective, cfg.de, init=init)
    stage_seconds["de"] = time.perf_counter() - t0

    # exact extended-real log-likelihoods for weighting (the DE scores are
    # floored, which cannot distinguish "barely feasible" from "empty")
    t0 = time.perf_counter()
    true_ll = _lik.object_log_likelihood_many(obj, population.poses, scene, cls, cfg.likelihood)
    population = ParticleSet(poses=population.poses, log_liks=true_ll)
    resampled = importance_resample(population, cfg.particles, seed=cfg.de.seed + 1)
    stage_seconds["resample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    marginals = []
    for name in COORDINATES:
        vals = resampled.coordinate(name)
        marginals.append(kde_marginal(vals, name, circular=name in CIRCULAR))
    stage_seconds["kde"] = time.perf_counter() - t0

    return EstimateResult(particles=resampled, marginals=marginals,
                          mle_pose=init, stage_seconds=stage_seconds)
