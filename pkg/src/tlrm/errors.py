"""Exception types shared across the package."""


class TlrmError(Exception):
    """Base class for all package errors."""


class ShapeError(TlrmError, ValueError):
    pass


class ContractError(TlrmError, ValueError):
    pass


class DomainError(TlrmError, ValueError):
    pass


class NoSpikesError(TlrmError, ValueError):
    """Raised when a population response carries no spikes to decode."""


class SingularityError(TlrmError, ArithmeticError):
    pass


class PlacementError(TlrmError, RuntimeError):
    """Raised when non-overlapping ball positions cannot be found."""


class UnsupportedVariantError(TlrmError, ValueError):
    pass


class ConfigError(TlrmError, ValueError):
    pass


class FormatError(TlrmError, ValueError):
    """Raised on malformed dataset or checkpoint files."""
