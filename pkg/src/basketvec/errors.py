"""Exception types shared across the package."""


class BasketVecError(Exception):
    """Base class for errors caused by bad input data or configuration."""


class ParseError(BasketVecError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(BasketVecError, ValueError):
    """A value, file, or configuration violates a documented precondition."""
