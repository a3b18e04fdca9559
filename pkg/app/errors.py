"""
Exception hierarchy for the EnvCF toolkit.

Every error raised on purpose by the services derives from EnvCFError and
carries the process exit code the CLI reports for it.
"""

from enum import IntEnum
from typing import Any, Dict, Optional


class ExitCode(IntEnum):
    """Process exit statuses of the `envcf` command."""
    OK = 0
    FAILURE = 1
    CONFIG = 2
    DATA = 3
    TRAINING = 4
    SAMPLING = 5


class EnvCFError(Exception):
    """Base class for all toolkit errors."""

    exit_code: ExitCode = ExitCode.FAILURE

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})


class InvalidArgumentError(EnvCFError, ValueError):
    """An operation was called with an out-of-range or malformed argument."""
    exit_code = ExitCode.CONFIG


class ConfigError(EnvCFError, ValueError):
    """A run configuration is invalid or internally inconsistent."""
    exit_code = ExitCode.CONFIG


class ShapeError(EnvCFError, ValueError):
    """Raster or tensor shapes do not line up."""
    exit_code = ExitCode.DATA


class RasterValidationError(EnvCFError, ValueError):
    """A raster violates its value-range or content invariants."""
    exit_code = ExitCode.DATA


class GenerationError(EnvCFError):
    """Synthetic data could not be generated (e.g. no open cell for the BS)."""
    exit_code = ExitCode.DATA


class DataError(EnvCFError):
    """A dataset directory is missing, empty or malformed."""
    exit_code = ExitCode.DATA


class UndefinedReferenceError(EnvCFError, ValueError):
    """A metric is undefined for the given reference (e.g. all-zero NMSE reference)."""
    exit_code = ExitCode.DATA


class CheckpointError(EnvCFError):
    """A checkpoint is unreadable or does not match the requested model/schedule."""
    exit_code = ExitCode.DATA


class TrainingFault(EnvCFError):
    """Training produced a non-finite loss or gradient."""
    exit_code = ExitCode.TRAINING


class SamplingFault(EnvCFError):
    """The reverse diffusion chain produced non-finite values."""
    exit_code = ExitCode.SAMPLING


class StageError(EnvCFError):
    """A pipeline stage failed; wraps the original error and names the stage."""

    def __init__(self, stage: str, cause: BaseException):
        diagnostics = getattr(cause, "diagnostics", None)
        super().__init__(f"stage '{stage}' failed: {cause}", diagnostics)
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", ExitCode.FAILURE)
