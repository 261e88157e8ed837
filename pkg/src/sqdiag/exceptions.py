"""Exception types raised across the package."""

from __future__ import annotations


class SQDError(Exception):
    """Base class for all package errors."""


class FcidumpError(SQDError, ValueError):
    """Malformed or inconsistent integral file."""


class SectorMismatchError(SQDError, ValueError):
    """Determinants or states belong to different particle-number sectors."""


class AmplitudeFileError(SQDError, ValueError):
    """Malformed amplitude file or inconsistent amplitude shapes."""


class EmptyPoolError(SQDError, ValueError):
    """No weight-correct configurations were available to build a subspace."""


class ConvergenceError(SQDError):
    """An iterative solver failed to reach its tolerance."""


class ResourceLimitError(SQDError):
    """A dimension guard was tripped."""


class ConfigError(SQDError, ValueError):
    """Invalid run configuration."""


class PipelineError(SQDError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"[{stage}] {error}")
        self.stage = stage
        self.error = error
