"""Matching-free probabilistic 6DOF object pose estimation.

Evaluates pose log-likelihoods of descriptor-bearing point clouds against
voxelized scene fields, finds maximum-likelihood poses by robust
registration with graduated non-convexity, and represents the full
multimodal pose distribution as weighted particles with KDE marginals.
"""

from .cloud import StructuredPointCloud
from .field import (DescriptorValue, ClassifierField, SceneField, NEG_INF,
                    build_scene_field, query_classifier, query_descriptor,
                    similarity)
from .likelihood import (LikelihoodConfig, object_log_likelihood,
                         objective_for_optimizer, point_log_loc)
from .mle import (CorrespondenceSet, GncConfig, GridPoints, MleConfig,
                  build_grid, correspondences_from_costs, cost_matrix,
                  gnc_solve, mle_estimate, robust_cost, weighted_rigid_align)
from .sampler import (DeConfig, EstimateConfig, MarginalDensity, McmcConfig,
                      ParticleSet, de_sample, effective_sample_size,
                      estimate_distribution, importance_resample, kde_marginal,
                      mcmc_sample)
from .se3 import (Pose, euler_zyx, pose_apply, pose_compose, pose_from_vector,
                  pose_inverse, pose_to_vector, rotation_distance,
                  translation_distance)
from .synth import SynthInstance, SynthSpec, best_buddy_classifier, generate

__version__ = "0.1.0"

__all__ = [
    "StructuredPointCloud", "DescriptorValue", "ClassifierField", "SceneField",
    "NEG_INF", "build_scene_field", "query_classifier", "query_descriptor",
    "similarity", "LikelihoodConfig", "object_log_likelihood",
    "objective_for_optimizer", "point_log_loc", "CorrespondenceSet",
    "GncConfig", "GridPoints", "MleConfig", "build_grid",
    "correspondences_from_costs", "cost_matrix", "gnc_solve", "mle_estimate",
    "robust_cost", "weighted_rigid_align", "DeConfig", "EstimateConfig",
    "MarginalDensity", "McmcConfig", "ParticleSet", "de_sample",
    "effective_sample_size", "estimate_distribution", "importance_resample",
    "kde_marginal", "mcmc_sample", "Pose", "euler_zyx", "pose_apply",
    "pose_compose", "pose_from_vector", "pose_inverse", "pose_to_vector",
    "rotation_distance", "translation_distance", "SynthInstance", "SynthSpec",
    "best_buddy_classifier", "generate",
]
