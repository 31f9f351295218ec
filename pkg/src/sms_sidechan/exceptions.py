"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SidechanError(ValueError):
    """Base class for data and validation errors."""


# -- trace parsing -----------------------------------------------------------


class TraceError(SidechanError):
    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class MalformedRow(TraceError):
    pass


class TimestampOrderViolation(TraceError):
    def __init__(self, line: int, reason: str = "timestamps out of order") -> None:
        super().__init__(line, reason)


class UnknownEnum(TraceError):
    def __init__(self, line: int, field: str, value: str = "") -> None:
        self.field = field
        super().__init__(line, f"unknown value {value!r} for field {field!r}")


# -- features ----------------------------------------------------------------


class NotDelivered(SidechanError):
    pass


class DegenerateTiming(SidechanError):
    pass


class ZeroBaseline(SidechanError):
    pass


class NonConsecutive(SidechanError):
    pass


# -- simulator ---------------------------------------------------------------


class InvalidParameter(SidechanError):
    pass


# -- learning ----------------------------------------------------------------


class EmptyMatrix(SidechanError):
    pass


class SingleClass(SidechanError):
    pass


class NonFinite(SidechanError):
    pass


class DimensionMismatch(SidechanError):
    pass


class ClassTooSmall(SidechanError):
    def __init__(self, label, count: int, k: int) -> None:
        self.label = label
        self.count = count
        super().__init__(f"class {label!r} has {count} members, need at least {k}")


class EmptyGrid(SidechanError):
    pass


class EmptyTraining(SidechanError):
    pass


# -- pipeline ----------------------------------------------------------------


class GroupEmpty(SidechanError):
    def __init__(self, label: str) -> None:
        self.label = label
        super().__init__(f"group {label!r} has no samples")


class MissingStageModel(SidechanError):
    pass


class LabelMismatch(SidechanError):
    pass


class InsufficientPoints(SidechanError):
    pass
