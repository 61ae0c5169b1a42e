"""Exception types shared across the package."""


class DistilRLError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DistilRLError):
    """Invalid static configuration: bad layer shapes, unknown task names, empty task sets."""


class ContractError(DistilRLError):
    """A runtime precondition was violated (shape mismatch, stale cache, key mismatch)."""


class NumericError(DistilRLError):
    """A computation produced NaN/Inf; the triggering update must leave state unchanged."""
