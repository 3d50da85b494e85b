"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: configuration problems exit 2,
I/O problems (plain ``OSError``) exit 3, contract violations exit 4.
"""


class PipelineError(Exception):
    """Base class for all pipeline-specific errors."""


class ShapeError(PipelineError, ValueError):
    """Inputs have incompatible or unsupported resolutions/shapes."""


class DomainError(PipelineError, ValueError):
    """A scalar argument is outside its valid domain."""


class ModeError(PipelineError, ValueError):
    """Tensor channel count does not match the single/multi reference mode."""


class CropError(PipelineError, ValueError):
    """Frame too small for the requested crop."""


class ConfigError(PipelineError, ValueError):
    """Invalid or inconsistent run configuration."""


class InvariantError(PipelineError, RuntimeError):
    """A documented invariant was violated at runtime."""


class EstimationError(PipelineError, RuntimeError):
    """Degenerate input made an estimation problem unsolvable."""


class InsufficientFramesError(PipelineError, ValueError):
    """Sequence too short for the requested temporal operation."""


class TrainingDivergedError(PipelineError, RuntimeError):
    """Loss became non-finite; a diagnostic checkpoint was written."""
