"""Exception types shared across the package."""


class DiflError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DiflError):
    """Operand shapes or extents are inconsistent."""


class DomainError(DiflError):
    """A value lies outside an operation's mathematical domain."""


class ContractError(DiflError):
    """An API precondition was violated by the caller."""


class ConfigError(DiflError):
    """Invalid or inconsistent configuration."""


class ManifestError(DiflError):
    """A dataset manifest could not be parsed."""


class DecodeError(DiflError):
    """An image file could not be decoded."""


class UndefinedMetricError(DiflError):
    """The requested metric is undefined for the given counts."""
