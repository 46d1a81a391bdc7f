"""Exception hierarchy shared across the package."""


class ShadowSearchError(Exception):
    """Base class for all package errors."""


class ConfigError(ShadowSearchError):
    """Invalid configuration (bad bounds, unknown kind, missing cache entry)."""


class ContractError(ShadowSearchError):
    """A call violated an operation's precondition (shape mismatch, empty batch)."""


class NumericError(ShadowSearchError):
    """A numeric computation produced NaN/Inf or received non-finite inputs."""


class InsufficientDataError(ShadowSearchError):
    """Not enough data to run a data-driven heuristic; callers may fall back."""


class DegenerateInputError(ShadowSearchError):
    """Input geometry is degenerate (too few points, zero covariance)."""


class IntegrityError(ShadowSearchError):
    """A persisted artifact failed its magic/version/checksum validation."""
