"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`TrafficCastError`. The two intermediate classes decide the CLI exit
code: :class:`DataError` maps to 2, :class:`NumericError` to 3.
"""


class TrafficCastError(Exception):
    """Base class for all package errors."""


class DataError(TrafficCastError, ValueError):
    """Input data is malformed, misaligned or insufficient."""


class NumericError(TrafficCastError, ArithmeticError):
    """A numerical procedure could not produce a valid result."""


class SeriesTooShort(DataError):
    pass


class MisalignedSeries(DataError):
    pass


class DisaggregationUnsupported(DataError):
    pass


class DegenerateSeries(DataError):
    pass


class EmptyMask(DataError):
    pass


class IntervalMismatch(DataError):
    pass


class HistoryGap(DataError):
    pass


class AlignmentError(DataError):
    pass


class ZeroActual(DataError):
    pass


class LengthMismatch(DataError):
    pass


class SpanMismatch(DataError):
    pass


class CorruptFile(DataError):
    pass


class VersionUnsupported(DataError):
    pass


class MalformedMessage(DataError):
    pass


class UntrainedModel(DataError):
    pass


class ShapeMismatch(NumericError, ValueError):
    pass


class NonStationaryFit(NumericError):
    pass


class NonInvertibleFit(NumericError):
    pass


class SingularNormalEquations(NumericError):
    pass


class NoViableOrder(NumericError):
    pass
