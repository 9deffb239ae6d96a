"""Exception types shared across the package.

The CLI maps these onto stable exit codes; library callers can catch the
base class or individual types.
"""


class PoselikError(Exception):
    """Base class for all errors raised by this package."""


# --- input / validation (CLI exit 2) ---

class DegenerateQuaternion(PoselikError):
    """Quaternion part of a pose vector has (near-)zero norm."""


class EmptyInput(PoselikError):
    """An operation that needs at least one point received none."""


class NonFiniteCoordinate(PoselikError):
    """Point coordinates contain NaN or infinity."""


class InvalidSpec(PoselikError):
    """Synthetic-scene spec failed validation."""


class InvalidBounds(PoselikError):
    """Search bounds are empty, inverted or non-finite."""


class InfeasibleInit(PoselikError):
    """MCMC initial pose has zero density."""


class TooFewSamples(PoselikError):
    """KDE needs at least two samples."""


class BadMagic(PoselikError):
    """File does not start with the expected format magic."""


class TruncatedPayload(PoselikError):
    """File is shorter than its header declares."""


class NonFiniteValue(PoselikError):
    """File payload contains values outside the format's domain.

    Covers NaN/inf payloads as well as out-of-range values such as
    positive classifier log-probabilities.
    """


class GeometryMismatch(PoselikError):
    """Paired scene and classifier grids do not share geometry."""


# --- solver state (CLI exits 4 / 5) ---

class NoRegularVoxels(PoselikError):
    """Scene field holds no Regular voxel to build a grid from."""


class NoCorrespondences(PoselikError):
    """Every object point was dropped as unlocalizable."""


class ZeroWeightSum(PoselikError):
    """Weighted alignment received an all-zero weight vector."""


class AllInfeasible(PoselikError):
    """No particle has positive importance weight."""
