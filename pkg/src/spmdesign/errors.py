"""Exception types shared across the package."""


class SpmError(Exception):
    """Base class for all package errors."""


class ScalingError(SpmError):
    """Non-finite or out-of-domain value passed to the parameter scalings."""


class ProfileError(SpmError):
    """Inconsistent current-profile construction or comparison."""


class SimulationError(SpmError):
    """Forward simulation could not be completed."""


class VoltageUnreachableError(SimulationError):
    """Requested initial voltage has no root on the admissible SOC window."""


class NonMonotoneOCVError(SimulationError):
    """Multiple SOC roots for the initial voltage; refusing to pick silently."""


class SaturationError(SimulationError):
    """Concentration clamp events exceeded the configured budget."""


class KineticsError(SimulationError):
    """Exchange-current exponent overflow or underflow."""


class IntegrationError(SpmError):
    """Adaptive quadrature of the OCV integral did not converge."""


class DataError(SpmError):
    """Malformed measurement data or dataset."""


class ConfigError(SpmError):
    """Invalid or inconsistent configuration."""
