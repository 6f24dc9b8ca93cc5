"""
Exception hierarchy for the interaction-motion pipeline.

Every error a pipeline stage can raise derives from MotionPipelineError.
Value problems also derive from ValueError and file problems from OSError,
so callers catching the builtin families keep working.
"""


class MotionPipelineError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(MotionPipelineError, ValueError):
    """A configuration value violates its documented range."""


class ShapeMismatch(MotionPipelineError, ValueError):
    """Array or tensor shapes disagree with the expected contract."""


class DegenerateRotation(MotionPipelineError, ValueError):
    """A 6D rotation cannot be orthonormalized (zero or parallel columns)."""


class NotARotation(MotionPipelineError, ValueError):
    """A 3x3 matrix is not orthonormal with determinant +1."""


class DegenerateStats(MotionPipelineError, ValueError):
    """Normalization statistics are non-finite or have a vanishing std."""


class DatasetIOError(MotionPipelineError, OSError):
    """A dataset or checkpoint file could not be read or written."""


class FormatVersionMismatch(MotionPipelineError, ValueError):
    """A container file has the wrong magic, version, or a truncated payload."""


class LayoutMismatch(MotionPipelineError, ValueError):
    """Two motion collections use incompatible layouts or skeletons."""


class CheckpointMismatch(MotionPipelineError, ValueError):
    """A checkpoint does not match the model it is being loaded into."""


class InvalidScheduleParams(MotionPipelineError, ValueError):
    """Noise schedule endpoints or length are out of range."""


class InvalidTimestepOrder(MotionPipelineError, ValueError):
    """A DDIM step was asked to move forward in time."""


class TimestepOutOfRange(MotionPipelineError, ValueError):
    """A diffusion timestep lies outside [1, T]."""


class LatticeMismatch(MotionPipelineError, ValueError):
    """Two voxel grids do not share a lattice."""


class SingularCovariance(MotionPipelineError, ValueError):
    """A covariance product has a clearly negative spectrum."""


class InsufficientSamples(MotionPipelineError, ValueError):
    """A metric needs more samples than were provided."""


class NonFiniteLoss(MotionPipelineError, FloatingPointError):
    """Training produced a NaN or infinite loss."""
