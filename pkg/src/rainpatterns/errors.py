"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data or configuration violates a documented contract."""


class ParseError(ValidationError):
    """A data file could not be parsed; message carries the line number."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value (degenerate parameters)."""
