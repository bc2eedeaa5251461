"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`NullotError`.  The CLI
maps :class:`ConfigError` subclasses to exit code 3 and every other
:class:`NullotError` to exit code 2.
"""


class NullotError(Exception):
    """Base class for all toolkit errors."""


class NumericalError(NullotError):
    """A computation could not be carried out reliably."""


class ConfigError(NullotError):
    """Invalid user input at the configuration level."""


# spacetime
class SingularMetric(NumericalError):
    pass


class OutOfChart(NumericalError):
    pass


class WeightNotSmooth(NumericalError):
    pass


class InvalidN(NumericalError):
    pass


class SignatureLoss(NumericalError):
    pass


# nullgeo
class LeftChart(NumericalError):
    pass


class NullDefect(NumericalError):
    pass


class DegenerateSection(NumericalError):
    pass


class NoTransverse(NumericalError):
    pass


class FocalPoint(NumericalError):
    def __init__(self, message, parameter=None, node=None):
        super().__init__(message)
        self.parameter = parameter
        self.node = node


class FitFailure(NumericalError):
    pass


# hypersurface
class OutOfWindow(NumericalError):
    pass


class NonPositiveScale(NumericalError):
    pass


# transport
class MassMismatch(NumericalError):
    pass


class EmptySupport(NumericalError):
    pass


class NonInjective(NumericalError):
    pass


class NotAbsolutelyContinuous(NumericalError):
    pass


class NotNullConnected(NumericalError):
    pass


# apps
class NotComplete(NumericalError):
    pass


class MonotonicityViolation(NumericalError):
    pass


# configuration
class ParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}, column {column})"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(ConfigError):
    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnknownMetric(ConfigError):
    pass
