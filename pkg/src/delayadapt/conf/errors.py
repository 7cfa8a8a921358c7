# Exception hierarchy
# contributors: smlee

# History
# 2025-02-10 - v1.0.0 | first commit

# Module
from typing import Any, Optional

# Main
class DelayAdaptError(RuntimeError):
    """Base error. ``exit_code`` is what the cli returns when it escapes.
    """
    exit_code:int = 1


class ConfigError(DelayAdaptError):
    exit_code = 2


class DataError(DelayAdaptError):
    """Input data violates a schema or an invariant

    Args:
        message: description
        line: 1-based line number in the offending file, when known
    """
    exit_code = 3

    def __init__(self, message:str, line:Optional[int]=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ProtocolError(DelayAdaptError):
    exit_code = 4


class FitError(DelayAdaptError):
    exit_code = 1


# configuration
class ConfigValidationError(ConfigError):
    def __init__(self, field_path:str, message:str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class EmptyRange(ConfigError):
    pass


# data
class MissingHeader(DataError):
    pass


class BadEnum(DataError):
    pass


class NonNumericTimestamp(DataError):
    pass


class MalformedRow(DataError):
    pass


class DuplicateSimultaneousPhaseEvent(DataError):
    def __init__(self, phase_id:str, timestamp_ms:int):
        self.phase_id = phase_id
        self.timestamp_ms = timestamp_ms
        super().__init__(f"phase {phase_id} has two events at {timestamp_ms} ms")


class UnknownDetector(DataError):
    def __init__(self, detector_id:str):
        self.detector_id = detector_id
        super().__init__(f"detector {detector_id} is not mapped in the intersection config")


class EmptyTimeline(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class WeightLengthMismatch(DataError):
    pass


# protocol
class InsufficientTargetData(ProtocolError):
    pass


class TooFewTargetSamples(ProtocolError):
    pass


class EmptyDomain(ProtocolError):
    pass


# fitting
class AllZeroWeights(FitError):
    pass


class DegenerateDirection(FitError):
    pass


class NonFiniteKernel(FitError):
    pass


class SingularSystem(FitError):
    pass


class NonConvergence(FitError):
    """Iteration cap reached; ``estimate`` holds the best iterate
    """
    def __init__(self, message:str, estimate:Any=None):
        self.estimate = estimate
        super().__init__(message)


class AllLabelsZero(FitError):
    pass


class EmptyInput(FitError):
    pass
