"""Exception hierarchy shared by all modules."""


class LbsPrivacyError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(LbsPrivacyError, ValueError):
    """An argument is outside its documented domain."""


class EmptyInput(ParameterError):
    pass


class DegenerateBody(ParameterError):
    """A convex body has zero area where a proper polygon is required."""


class OriginOutside(ParameterError):
    pass


class DimensionMismatch(ParameterError):
    pass


class ZeroEvidence(ParameterError):
    """Every prior-times-likelihood term vanished; Bayes rule is undefined."""


class EmptySet(ParameterError):
    pass


class InvalidDelta(ParameterError):
    pass


class InvalidEpsilon(ParameterError):
    pass


class InvalidParams(ParameterError):
    pass


class EmptyList(ParameterError):
    pass


class InvalidTiming(ParameterError):
    pass


class UnreachableDestination(ParameterError):
    pass


class InsufficientSamples(ParameterError):
    pass


class OutOfRange(ParameterError):
    pass


class DataError(LbsPrivacyError):
    """Input files are unreadable or malformed."""


class FormatError(DataError):
    pass
