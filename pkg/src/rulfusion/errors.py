"""Exception types shared across the package.

Fail-fast philosophy: malformed inputs, shape disagreements, and non-finite
numerics raise immediately with enough context to locate the offender.
"""


class ShapeError(ValueError):
    """Tensor/matrix dimensions do not satisfy an operation's contract."""


class ParseError(ValueError):
    """A data file violates the expected on-disk format."""


class ConfigError(ValueError):
    """A configuration value is outside its legal range."""


class NumericError(ArithmeticError):
    """A computation produced (or received) non-finite values."""


class ContractError(ValueError):
    """A call violates an API precondition that is not shape- or config-related."""
