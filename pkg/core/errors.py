"""
Error taxonomy shared by every lab module.

Validation failures map to CLI exit code 1, everything else to exit code 2.
"""

from typing import Iterable, List


EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class LabError(Exception):
    """Root of all domain errors raised by the lab"""

    exit_code = EXIT_RUNTIME


class ValidationError(LabError):
    """Inputs or configuration rejected before any work starts"""

    exit_code = EXIT_VALIDATION


class ConfigValidationError(ValidationError):
    """Run config violates one or more invariants"""

    def __init__(self, problems: Iterable[str]):
        self.problems: List[str] = list(problems)
        super().__init__("invalid run config: " + "; ".join(self.problems))


class ManifestError(ValidationError):
    pass


class LabelPairingError(ValidationError):
    pass


# signal-frontend

class InputTooShortError(LabError, ValueError):
    def __init__(self, message: str = "input too short"):
        super().__init__(message)


class AudioFormatError(ValidationError):
    pass


class FeatureFormatError(LabError, ValueError):
    pass


class TooFewFramesError(LabError, ValueError):
    def __init__(self, message: str = "too few frames to normalize"):
        super().__init__(message)


# frontends / encoder

class FrameshiftMismatchError(LabError, ValueError):
    pass


class NoForwardPassError(LabError, RuntimeError):
    def __init__(self, message: str = "no recorded forward pass"):
        super().__init__(message)


class LengthMismatchError(LabError, ValueError):
    pass


class NonFiniteFeaturesError(LabError, ValueError):
    def __init__(self, message: str = "non-finite features"):
        super().__init__(message)


# masking

class MaskDimensionError(LabError, ValueError):
    def __init__(self, message: str = "mask embedding dimension mismatch"):
        super().__init__(message)


class MaskLengthError(LabError, ValueError):
    pass


# labeler

class NotEnoughDataError(LabError, ValueError):
    pass


class DimensionMismatchError(LabError, ValueError):
    pass


class PhonemeLabelError(ValidationError, ValueError):
    pass


# losses

class EmptyMaskError(LabError, ValueError):
    def __init__(self, message: str = "empty mask"):
        super().__init__(message)


class HeadConfigurationError(ValidationError):
    pass


# finetune

class CtcGuardViolation(LabError, ValueError):
    pass


class TokenizerError(LabError, ValueError):
    pass


class EmptyReferenceError(LabError, ValueError):
    def __init__(self, message: str = "empty reference"):
        super().__init__(message)


# trainer

class NonFiniteGradientError(LabError, FloatingPointError):
    def __init__(self, message: str = "non-finite gradient"):
        super().__init__(message)


class CheckpointError(LabError):
    pass


# profiler

class ProfilerScopeError(ValidationError):
    pass


class EmptyWindowError(LabError, ValueError):
    def __init__(self, message: str = "empty timing window"):
        super().__init__(message)
