"""Exception types shared across the package."""


class AuctionBookError(Exception):
    """Base class for all package errors."""


class DomainError(AuctionBookError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class ConfigurationError(AuctionBookError, ValueError):
    """Invalid parameters or solver settings, detected before any work is done."""


class NumericalFailure(AuctionBookError, RuntimeError):
    """A computation produced values that violate its invariants."""


class NoClearing(AuctionBookError, RuntimeError):
    """The order book has no price with positive matched volume."""


class FitError(AuctionBookError, RuntimeError):
    """Every start of a multi-start fit failed."""

    def __init__(self, message, traces=None):
        super().__init__(message)
        self.traces = traces or []


class ParamFileError(AuctionBookError, ValueError):
    """Malformed key-value parameter file."""

    def __init__(self, path, line, column, message):
        self.path = str(path)
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"{self.path}:{line}:{column}: {message}")
