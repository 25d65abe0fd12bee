"""Exception types raised across the package."""


class FedRepLabError(Exception):
    """Base class for all package errors."""


class RankDeficient(FedRepLabError, ValueError):
    """A matrix that must have full column rank does not."""


class DimensionError(FedRepLabError, ValueError):
    """Requested dimensions are inconsistent (e.g. ``k >= min(n, d)``)."""


class DimensionMismatch(DimensionError):
    """Two operands have incompatible shapes."""


class Diverged(FedRepLabError, ArithmeticError):
    """An iterate became non-finite or blew past the divergence guard."""


class ConfigError(FedRepLabError, ValueError):
    """Invalid configuration value; the message names the offending key."""

    def __init__(self, key, reason):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")
