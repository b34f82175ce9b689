"""Exception types shared across the package."""


class SBridgeError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(SBridgeError, ValueError):
    """A parameter is outside its documented domain."""


class TimeOrderError(SBridgeError, ValueError):
    """A kernel was requested with t < s."""


class DegenerateBridgeError(SBridgeError, ValueError):
    """An endpoint cannot be bridged: P(X_tau = z | X_s = x) = 0 for some x."""


class SupportViolationError(SBridgeError, ValueError):
    """A coupling puts mass on an endpoint pair the reference cannot reach."""


class InfiniteDivergenceError(SBridgeError, ValueError):
    """KL divergence is +inf: the first measure has mass where the second has none."""


class SizeMismatchError(SBridgeError, ValueError):
    """Two objects that must share a dimension do not."""


class CapExceededError(SBridgeError, ValueError):
    """An enumeration would exceed its configured size cap."""


class PositivityError(SBridgeError, ValueError):
    """A quantity required to be strictly positive vanished."""


class ConfigSchemaError(SBridgeError, ValueError):
    """A config document does not match its schema."""
