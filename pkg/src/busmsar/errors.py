"""Exception types raised across the package.

Two families matter to callers: :class:`InputError` for bad data, configs
and arguments, and :class:`NumericalError` for failures of the numerics
themselves. The CLI maps them to exit codes 2 and 3 respectively.
"""


class MsarError(Exception):
    """Base class for all package errors."""


class InputError(MsarError, ValueError):
    """Invalid input: data, configuration, or argument values."""


class NumericalError(MsarError, ArithmeticError):
    """Numerical failure that survived the built-in repairs."""


class NotPositiveDefinite(NumericalError):
    pass


class ObservedBlockSingular(NotPositiveDefinite):
    pass


class NumericalUnderflow(NumericalError):
    pass


class NonFiniteLikelihood(NumericalError):
    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite log-likelihood at iteration {iteration}")


class DegreesOfFreedomTooSmall(InputError):
    pass


class NonPositiveConcentration(InputError):
    pass


class EmptyComplement(InputError):
    pass


class LengthMismatch(InputError):
    pass


class IndexOutOfRange(InputError):
    pass


class EmptyInput(InputError):
    pass


class TooFewSamples(InputError):
    pass


class EmptyBundle(InputError):
    pass


class MissingTruth(InputError):
    pass


class TargetBeforeSecondRun(InputError):
    pass


class SchemaError(InputError):
    pass


class RecordError(InputError):
    """A data row problem located at (day, run, link)."""

    def __init__(self, day, run, link, detail=""):
        self.day, self.run, self.link = day, run, link
        where = f"day={day!r}, run={run}, link={link}"
        super().__init__(f"{type(self).__name__}({where}){': ' + detail if detail else ''}")


class MissingLink(RecordError):
    pass


class InconsistentHeadway(RecordError):
    pass


class NonFiniteValue(RecordError):
    pass


class ConstantColumn(InputError):
    def __init__(self, dim):
        self.dim = dim
        super().__init__(f"dimension {dim} is constant and cannot be standardized")


class DimOutOfRange(InputError):
    pass


class VersionMismatch(InputError):
    pass


class InvariantViolation(InputError):
    pass


class ParseError(InputError):
    pass
