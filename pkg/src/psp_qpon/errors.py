"""Exception hierarchy shared by every stage of the simulator."""

from __future__ import annotations


class QponError(Exception):
    """Base class for all errors raised by this package."""


# gaussian core
class NonSymmetric(QponError, ValueError):
    pass


class OddDimension(QponError, ValueError):
    pass


class UnphysicalEigenvalue(QponError, ValueError):
    pass


class SingularBlock(QponError, ValueError):
    pass


class DegenerateCovariance(QponError, ValueError):
    pass


# optics
class InvalidVariance(QponError, ValueError):
    pass


class LengthMismatch(QponError, ValueError):
    pass


class UnsupportedFanout(QponError, ValueError):
    pass


class DegenerateSource(QponError, ValueError):
    pass


class ScheduleMismatch(QponError, ValueError):
    pass


class FrameFormatError(QponError, ValueError):
    pass


# dsp
class InvalidCutoff(QponError, ValueError):
    pass


class NonDivisibleLength(QponError, ValueError):
    pass


class SyncFailed(QponError):
    def __init__(self, peak: float, threshold: float, offset: int):
        super().__init__(
            f"frame synchronization failed: peak correlation {peak:.4g} "
            f"below threshold {threshold:.4g} (best offset {offset})"
        )
        self.peak = peak
        self.threshold = threshold
        self.offset = offset


class DegenerateSegment(QponError, ValueError):
    pass


class EmptyHistory(QponError, ValueError):
    pass


class InsufficientCalibration(QponError, ValueError):
    pass


# security
class NotNormalized(QponError, ValueError):
    pass


class InsufficientSamples(QponError, ValueError):
    pass


class NegativeTransmittance(QponError, ValueError):
    pass


class IndexOutOfRange(QponError, IndexError):
    pass


class UnphysicalInput(QponError, ValueError):
    pass


# harness
class ScenarioParseError(QponError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


class ScenarioValidationError(QponError, ValueError):
    def __init__(self, field: str, constraint: str):
        super().__init__(f"{field}: {constraint}")
        self.field = field
        self.constraint = constraint


class UnknownKey(ScenarioValidationError):
    pass


class UnknownAxis(QponError, ValueError):
    pass


class StageError(QponError):
    """A module error re-raised with the pipeline stage that produced it."""

    def __init__(self, stage: str, cause: BaseException, partial=None):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial = partial
