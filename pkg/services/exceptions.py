"""
Exception hierarchy for the CT normalization pipeline.
Every error carries the CLI exit code it maps to.
"""

from typing import Optional


EXIT_RUNTIME = 1
EXIT_REFUSED_OVERWRITE = 2
EXIT_INVALID_CONFIG = 3


class CTNormError(Exception):
    """Base class for all pipeline errors"""
    exit_code: int = EXIT_RUNTIME


class ShapeError(CTNormError, ValueError):
    """Array or tensor shapes violate an operation's contract"""


class RoiBoundsError(ShapeError):
    """RoiBox does not fit inside its volume"""

    def __init__(self, axis: str, message: str):
        super().__init__(f"ROI out of bounds on {axis} axis: {message}")
        self.axis = axis


class DimsMismatchError(ShapeError):
    """Two volumes that must share dimensions do not"""


class VolumeFormatError(CTNormError, ValueError):
    """Binary artifact could not be parsed"""


class BadMagicError(VolumeFormatError):
    """File does not start with the expected magic bytes"""


class UnsupportedVersionError(VolumeFormatError):
    """File declares an unknown format version"""


class TruncatedFileError(VolumeFormatError):
    """File ends before its header or a payload element is complete"""


class LengthMismatchError(VolumeFormatError):
    """Header dimensions disagree with the payload length"""


class DoseDomainError(CTNormError, ValueError):
    """Dose fraction outside (0, 1]"""


class ConfigError(CTNormError, ValueError):
    """Invalid model, training or pipeline configuration"""
    exit_code = EXIT_INVALID_CONFIG


class PhantomSpecError(ConfigError):
    """Phantom specification is inconsistent"""


class PatchSamplingError(CTNormError, RuntimeError):
    """Rejection sampling could not find enough body patches"""


class TrainingError(CTNormError, RuntimeError):
    """Training diverged or received an invalid update"""

    def __init__(
        self,
        message: str,
        iteration: Optional[int] = None,
        last_checkpoint: Optional[str] = None,
        parameter: Optional[str] = None
    ):
        details = []
        if parameter is not None:
            details.append(f"parameter={parameter}")
        if iteration is not None:
            details.append(f"iteration={iteration}")
        if last_checkpoint is not None:
            details.append(f"last_checkpoint={last_checkpoint}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint
        self.parameter = parameter


class MissingArtifactError(CTNormError, FileNotFoundError):
    """A stage input produced by an earlier stage is missing"""

    def __init__(self, path, hint: str = ""):
        message = f"Missing artifact: {path}"
        if hint:
            message = f"{message} ({hint})"
        super().__init__(message)
        self.path = str(path)


class OverwriteRefusedError(CTNormError):
    """Stage output exists and --force was not given"""
    exit_code = EXIT_REFUSED_OVERWRITE

    def __init__(self, path):
        super().__init__(f"Refusing to overwrite existing output: {path} (use --force)")
        self.path = str(path)
