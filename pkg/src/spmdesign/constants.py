"""Physical constants (SI)."""

FARADAY = 96485.33212          # C/mol
GAS_CONSTANT = 8.314462618     # J/(mol K)
DEFAULT_TEMPERATURE = 298.15   # K (25 C)


def thermal_voltage(theta: float) -> float:
    """R*theta/F in volts."""
    return GAS_CONSTANT * theta / FARADAY
