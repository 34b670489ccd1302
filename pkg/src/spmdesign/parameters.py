"""Cell parameters, estimable-parameter scalings and admissible boxes.

The nine estimable quantities and their unscaled bounds:

    index  quantity                         lower    upper
      1    D_C   cathode diffusion          1e-4     1e-2
      2    D_A   anode diffusion            1e-4     1e-2
      3    xi_A  anode initial SOC          0.007    0.2
      4    R_I   inner resistance (ohm)     0.003    0.07
      5    m_C   cathode active mass (kg)   0.01     0.052
      6    m_A   anode active mass (kg)     0.006    0.034
      7    kt_C  cathode log reaction rate  -20      -1
      8    kt_A  anode log reaction rate    -23      10
      9    U_0   cathode OCV offset (V)     3        4

Scaled coordinates: log10 ratios for the diffusions, midpoint ratios for
xi_A, R_I, m_C, m_A, U_0, a midpoint shift for kt_C and the difference
kt_A - kt_C for the anode rate.  The scaled box for the difference
coordinate is deliberately narrower ([-3, 11]) than what the unscaled
bounds would allow; it is the box the optimizers use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .constants import DEFAULT_TEMPERATURE
from .errors import ScalingError

N_PARAMETERS = 9

# Unscaled bounds, in the order above.
UNSCALED_LOWER = np.array([1e-4, 1e-4, 0.007, 0.003, 0.01, 0.006, -20.0, -23.0, 3.0])
UNSCALED_UPPER = np.array([1e-2, 1e-2, 0.2, 0.07, 0.052, 0.034, -1.0, 10.0, 4.0])

# Midpoints used by the ratio/shift scalings.
_XI_A_MID = (0.007 + 0.2) / 2.0      # 0.1035
_R_I_MID = (0.003 + 0.07) / 2.0      # 0.0365
_M_C_MID = (0.01 + 0.052) / 2.0      # 0.031
_M_A_MID = (0.006 + 0.034) / 2.0     # 0.02
_KT_C_MID = (-20.0 + -1.0) / 2.0     # -10.5
_U_0_MID = (3.0 + 4.0) / 2.0         # 3.5

MU_NAMES = ("mu_1", "mu_2", "mu_3", "mu_4", "mu_5", "mu_6", "mu_7", "mu_8", "mu_9")


def _scale_vector(unscaled: np.ndarray) -> np.ndarray:
    d_c, d_a, xi_a, r_i, m_c, m_a, kt_c, kt_a, u_0 = unscaled
    return np.array(
        [
            math.log10(d_c / UNSCALED_LOWER[0]),
            math.log10(d_a / UNSCALED_LOWER[1]),
            xi_a / _XI_A_MID,
            r_i / _R_I_MID,
            m_c / _M_C_MID,
            m_a / _M_A_MID,
            kt_c - _KT_C_MID,
            kt_a - kt_c,
            u_0 / _U_0_MID,
        ]
    )


def _unscale_vector(mu: np.ndarray) -> np.ndarray:
    kt_c = mu[6] + _KT_C_MID
    return np.array(
        [
            UNSCALED_LOWER[0] * 10.0 ** mu[0],
            UNSCALED_LOWER[1] * 10.0 ** mu[1],
            mu[2] * _XI_A_MID,
            mu[3] * _R_I_MID,
            mu[4] * _M_C_MID,
            mu[5] * _M_A_MID,
            kt_c,
            mu[7] + kt_c,
            mu[8] * _U_0_MID,
        ]
    )


# Scaled box: images of the unscaled bounds, except the difference
# coordinate mu_8 whose optimization box is pinned to [-3, 11].
MU_LOWER = _scale_vector(UNSCALED_LOWER)
MU_UPPER = _scale_vector(UNSCALED_UPPER)
MU_LOWER[7] = -3.0
MU_UPPER[7] = 11.0
MU_LOWER.setflags(write=False)
MU_UPPER.setflags(write=False)


def mu_midpoint() -> np.ndarray:
    return 0.5 * (MU_LOWER + MU_UPPER)


def is_admissible(mu: np.ndarray, atol: float = 0.0) -> bool:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (N_PARAMETERS,) or not np.all(np.isfinite(mu)):
        return False
    return bool(np.all(mu >= MU_LOWER - atol) and np.all(mu <= MU_UPPER + atol))


@dataclass(frozen=True)
class ElectrodeConstants:
    """Fixed and estimable constants of one electrode particle.

    `radius` is the scaled particle radius (the radial PDE runs on
    [0, radius]); `rho_cm` is the concentration scaling rho_i*c_{m,i}
    (mol/m^3); `rho_r_third` is the aggregate rho_i*R_i/3 that converts
    cell current to surface flux density; `rk_coeffs` are the
    Redlich-Kister coefficients A_{i,0}..A_{i,n}.
    """

    radius: float
    rho_cm: float
    rho_r_third: float
    active_mass: float      # kg
    diffusion: float        # scaled, 1/s when radius == 1
    log_rate: float         # dimensionless log reaction rate
    rk_coeffs: tuple[float, ...]
    ocv_offset: float       # V

    def __post_init__(self):
        if not (self.radius > 0 and self.rho_cm > 0 and self.rho_r_third > 0):
            raise ScalingError("electrode geometry constants must be positive")
        if not (self.active_mass > 0 and self.diffusion > 0):
            raise ScalingError("active mass and diffusion must be positive")
        if len(self.rk_coeffs) < 1:
            raise ScalingError("at least the order-0 RK coefficient is required")

    @property
    def rk_order(self) -> int:
        return len(self.rk_coeffs) - 1


@dataclass(frozen=True)
class CellParameters:
    """Full parameter set of the cell: two electrodes plus cell-level scalars."""

    cathode: ElectrodeConstants
    anode: ElectrodeConstants
    inner_resistance: float           # ohm
    anode_initial_soc: float          # dimensionless, in (0, 1)
    temperature: float = DEFAULT_TEMPERATURE  # K

    def __post_init__(self):
        if self.anode.ocv_offset != 0.0:
            raise ScalingError("the anode OCV offset is fixed to zero")
        if not 0.0 < self.anode_initial_soc < 1.0:
            raise ScalingError("anode initial SOC must lie in (0, 1)")
        if self.temperature <= 0:
            raise ScalingError("temperature must be positive")

    def estimable_vector(self) -> np.ndarray:
        """The nine unscaled estimable quantities in canonical order."""
        return np.array(
            [
                self.cathode.diffusion,
                self.anode.diffusion,
                self.anode_initial_soc,
                self.inner_resistance,
                self.cathode.active_mass,
                self.anode.active_mass,
                self.cathode.log_rate,
                self.anode.log_rate,
                self.cathode.ocv_offset,
            ]
        )


@dataclass(frozen=True)
class ScaledParameterVector:
    """A scaled parameter vector together with its admissible box."""

    values: np.ndarray
    lower: np.ndarray = MU_LOWER
    upper: np.ndarray = MU_UPPER

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape != (N_PARAMETERS,):
            raise ScalingError(f"expected {N_PARAMETERS} scaled parameters")

    @property
    def admissible(self) -> bool:
        return is_admissible(self.values)


def scale_parameters(params: CellParameters) -> ScaledParameterVector:
    """Map unscaled cell parameters to the scaled coordinates."""
    raw = params.estimable_vector()
    if not np.all(np.isfinite(raw)):
        raise ScalingError("non-finite estimable parameter")
    if raw[0] <= 0 or raw[1] <= 0:
        raise ScalingError("diffusion constants must be positive for the log scaling")
    return ScaledParameterVector(_scale_vector(raw))


def unscale_parameters(
    mu: np.ndarray | ScaledParameterVector, template: CellParameters
) -> CellParameters:
    """Rebuild cell parameters from scaled coordinates.

    Exact inverse of :func:`scale_parameters`; every non-estimable field is
    copied from `template`.
    """
    if isinstance(mu, ScaledParameterVector):
        mu = mu.values
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (N_PARAMETERS,) or not np.all(np.isfinite(mu)):
        raise ScalingError("scaled parameter vector must be 9 finite values")
    raw = _unscale_vector(mu)
    cathode = replace(
        template.cathode,
        diffusion=raw[0],
        active_mass=raw[4],
        log_rate=raw[6],
        ocv_offset=raw[8],
    )
    anode = replace(
        template.anode,
        diffusion=raw[1],
        active_mass=raw[5],
        log_rate=raw[7],
    )
    return replace(
        template,
        cathode=cathode,
        anode=anode,
        inner_resistance=raw[3],
        anode_initial_soc=raw[2],
    )


def default_cell() -> CellParameters:
    """The documented synthetic cell used as truth in virtual experiments.

    All constants the source tables leave unspecified (radii, concentration
    scalings, RK coefficient sets) are defined here; radii are scaled to 1
    so the diffusion constants are inverse time constants.
    """
    cathode = ElectrodeConstants(
        radius=1.0,
        rho_cm=28800.0,        # rho_C * c_{m,C}, mol/m^3
        rho_r_third=1600.0,    # rho_C * R_C / 3
        active_mass=0.031,
        diffusion=3e-3,
        log_rate=-11.5,
        rk_coeffs=(-16.0, 3.0),
        ocv_offset=3.5,
    )
    anode = ElectrodeConstants(
        radius=1.0,
        rho_cm=27120.0,
        rho_r_third=2260.0 / 3.0,
        active_mass=0.02,
        diffusion=1.2e-3,
        log_rate=-11.0,
        rk_coeffs=(-3.0, -2.0),
        ocv_offset=0.0,
    )
    return CellParameters(
        cathode=cathode,
        anode=anode,
        inner_resistance=0.03,
        anode_initial_soc=0.1,
    )


def truth_mu() -> np.ndarray:
    """Scaled coordinates of the synthetic truth cell."""
    return scale_parameters(default_cell()).values
