"""Exception hierarchy.

``ConfigError`` subclasses map to CLI exit code 2, ``NumericError`` subclasses
to exit code 3. Input-domain violations are ``ValueError``s.
"""


class ConfigError(ValueError):
    """Invalid configuration or parameter combination."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class NumericError(ArithmeticError):
    """A numerical procedure failed."""


class NoSignChange(NumericError):
    pass


class MaxIterExceeded(NumericError):
    pass


class GridTooNarrow(NumericError):
    pass


class PreBurnIn(ValueError):
    """Queried a radius/interval before the burn-in time t0.

    The confidence set is the whole real line there.
    """


class PreFirstObservation(ValueError):
    pass


class NonFiniteObservation(ValueError):
    pass


class NonFiniteScore(ValueError):
    pass


class InsufficientSplit(ValueError):
    pass


class DegenerateGamma(NumericError):
    pass


class LengthMismatch(ValueError):
    pass


class NotRejected(ValueError):
    pass
