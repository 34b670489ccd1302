"""Open-circuit potential (Redlich-Kister form), its integral and the
Butler-Volmer kinetics of one electrode.

The potential of electrode i at surface stoichiometry xi is

    O_i(xi) = U_{0,i} + V_T ln((1-xi)/xi)
              + V_T sum_k A_{i,k} [ (2xi-1)^{k+1} - 2 xi k (1-xi) / (2xi-1)^{k-1} ]

with V_T = R*theta/F.  The k = 0 summand has no second term (factor k).
Terms with k >= 2 are singular at xi = 1/2; they are evaluated with xi
nudged so that |2xi-1| >= RK_GUARD and every nudge is counted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .constants import thermal_voltage
from .errors import IntegrationError, KineticsError
from .parameters import ElectrodeConstants

CLAMP_EPSILON = 1e-6      # admissible stoichiometry window [eps, 1-eps]
RK_GUARD = 1e-9           # lower bound on |2xi-1| for singular RK terms
EXP_LIMIT = 700.0         # exp() overflow guard for the exchange current


@dataclass
class ClampCounters:
    """Diagnostics for stoichiometry clamps and RK singularity nudges."""

    surface_clamps: int = 0
    rk_guards: int = 0
    by_electrode: dict = field(default_factory=dict)

    def add(self, label: str, clamps: int, guards: int) -> None:
        self.surface_clamps += clamps
        self.rk_guards += guards
        prev = self.by_electrode.get(label, (0, 0))
        self.by_electrode[label] = (prev[0] + clamps, prev[1] + guards)


def clamp_stoichiometry(xi, counters: ClampCounters | None = None, label: str = ""):
    """Clamp xi into [CLAMP_EPSILON, 1-CLAMP_EPSILON], recording events."""
    xi = np.asarray(xi, dtype=float)
    clamped = np.clip(xi, CLAMP_EPSILON, 1.0 - CLAMP_EPSILON)
    if counters is not None:
        n = int(np.count_nonzero(clamped != xi))
        if n:
            counters.add(label, n, 0)
    return clamped


def _guarded_y(y: np.ndarray, counters: ClampCounters | None, label: str):
    """Push |2xi-1| away from zero for the singular RK terms."""
    small = np.abs(y) < RK_GUARD
    if not np.any(small):
        return y
    if counters is not None:
        counters.add(label, 0, int(np.count_nonzero(small)))
    sign = np.where(y >= 0.0, 1.0, -1.0)
    return np.where(small, sign * RK_GUARD, y)


def rk_polynomial(
    coeffs: tuple[float, ...],
    xi: np.ndarray,
    counters: ClampCounters | None = None,
    label: str = "",
) -> np.ndarray:
    """The Redlich-Kister sum (without the V_T factor) at stoichiometry xi."""
    xi = np.asarray(xi, dtype=float)
    y = 2.0 * xi - 1.0
    total = np.zeros_like(y)
    for k, a_k in enumerate(coeffs):
        if a_k == 0.0:
            continue
        if k == 0:
            total += a_k * y
            continue
        if k >= 2:
            yk = _guarded_y(y, counters, label)
            xk = 0.5 * (yk + 1.0)
        else:
            yk, xk = y, xi
        total += a_k * (yk ** (k + 1) - 2.0 * xk * k * (1.0 - xk) * yk ** (1 - k))
    return total


def rk_ocv(
    electrode: ElectrodeConstants,
    xi_surf,
    theta: float,
    counters: ClampCounters | None = None,
    label: str = "",
):
    """Open-circuit potential O_i(xi) in volts (scalar in, scalar out)."""
    scalar = np.isscalar(xi_surf) or np.ndim(xi_surf) == 0
    xi = clamp_stoichiometry(xi_surf, counters, label)
    v_t = thermal_voltage(theta)
    out = electrode.ocv_offset + v_t * (
        np.log((1.0 - xi) / xi) + rk_polynomial(electrode.rk_coeffs, xi, counters, label)
    )
    return float(out) if scalar else out


def _rk_integral_closed(coeffs: tuple[float, ...], xi, counters=None, label: str = ""):
    """Closed-form integral of the RK sum from 0 to xi (no V_T factor).

    Antiderivatives in y = 2x-1; the same |y| guard applies for k >= 2,
    where the integral through x = 1/2 is divergent and the guarded value
    mirrors the guarded integrand.
    """
    xi = np.asarray(xi, dtype=float)
    y_raw = 2.0 * xi - 1.0
    total = np.zeros_like(y_raw)

    def _power_primitive(p: int, y: np.ndarray) -> np.ndarray:
        # integral of y^p dy from -1 to y
        if p == -1:
            return np.log(np.abs(y))
        return (y ** (p + 1) - (-1.0) ** (p + 1)) / (p + 1)

    for k, a_k in enumerate(coeffs):
        if a_k == 0.0:
            continue
        y = _guarded_y(y_raw, counters, label) if k >= 2 else y_raw
        part1 = (y ** (k + 2) - (-1.0) ** (k + 2)) / (2.0 * (k + 2))
        if k == 0:
            total += a_k * part1
            continue
        part2 = -(k / 4.0) * (_power_primitive(1 - k, y) - _power_primitive(3 - k, y))
        total += a_k * (part1 + part2)
    return total


def _log_integral(xi):
    """integral_0^xi ln((1-x)/x) dx = -(1-xi)ln(1-xi) - xi ln(xi)."""
    xi = np.asarray(xi, dtype=float)
    return -(1.0 - xi) * np.log1p(-xi) - xi * np.log(xi)


def ocv_integral_fast(electrode: ElectrodeConstants, xi, theta: float, counters=None, label=""):
    """integral_0^xi O_i(x) dx via closed-form antiderivatives (hot path)."""
    xi = np.asarray(xi, dtype=float)
    v_t = thermal_voltage(theta)
    return electrode.ocv_offset * xi + v_t * (
        _log_integral(xi) + _rk_integral_closed(electrode.rk_coeffs, xi, counters, label)
    )


@lru_cache(maxsize=65536)
def _rk_integral_quad(electrode: ElectrodeConstants, xi_q: float) -> float:
    """Adaptive quadrature of the RK sum on (0, xi), split at x = 0.5."""
    if xi_q <= 0.0:
        return 0.0

    def integrand(x):
        return float(rk_polynomial(electrode.rk_coeffs, x))

    points = [0.5] if xi_q > 0.5 else None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, abserr = integrate.quad(
                integrand, 0.0, xi_q, points=points, limit=200,
                epsabs=1e-12, epsrel=1e-12,
            )
        except integrate.IntegrationWarning as exc:
            raise IntegrationError(
                f"OCV integral quadrature did not converge on (0, {xi_q}): {exc}"
            ) from exc
    return value


def rk_ocv_integral(electrode: ElectrodeConstants, xi: float, theta: float) -> float:
    """integral_0^xi O_i(x) dx: analytic offset/log parts plus adaptive
    quadrature of the RK terms, cached per (electrode, quantized xi)."""
    if not 0.0 < xi < 1.0:
        if xi == 0.0:
            return 0.0
        raise IntegrationError(f"stoichiometry {xi} outside (0, 1)")
    v_t = thermal_voltage(theta)
    xi_q = round(xi, 12)
    rk_part = _rk_integral_quad(electrode, xi_q)
    return float(electrode.ocv_offset * xi + v_t * (_log_integral(xi) + rk_part))


def _exchange_current_core(log_rate, ocv_vals, integral_vals, xi, theta):
    """exp(kt + (F/R theta) * ((xi - 1/2) O(xi) - integral_0^xi O)).

    Shared core so tests can drive it with synthetic OCV maps.
    """
    v_t = thermal_voltage(theta)
    arg = log_rate + ((np.asarray(xi) - 0.5) * ocv_vals - integral_vals) / v_t
    amax = float(np.max(arg))
    if amax > EXP_LIMIT:
        raise KineticsError(
            f"exchange-current exponent {amax:.1f} exceeds overflow limit {EXP_LIMIT}"
        )
    return np.exp(arg)


def exchange_current(
    electrode: ElectrodeConstants,
    xi_surf,
    theta: float,
    counters: ClampCounters | None = None,
    label: str = "",
):
    """Basic exchange current density j0_i > 0 (model units)."""
    scalar = np.isscalar(xi_surf) or np.ndim(xi_surf) == 0
    xi = clamp_stoichiometry(xi_surf, counters, label)
    o_vals = rk_ocv(electrode, xi, theta, counters, label)
    i_vals = ocv_integral_fast(electrode, xi, theta, counters, label)
    out = _exchange_current_core(electrode.log_rate, o_vals, i_vals, xi, theta)
    return float(out) if scalar else out


def boundary_flux(electrode: ElectrodeConstants, i_cell, faraday: float | None = None):
    """Reaction flux density j_i = -i_cell * rho_i R_i / (3 m_i F)."""
    from .constants import FARADAY

    f = FARADAY if faraday is None else faraday
    return -np.asarray(i_cell, dtype=float) * electrode.rho_r_third / (electrode.active_mass * f)


def electrode_potential(
    electrode: ElectrodeConstants,
    xi_surf,
    i_cell,
    theta: float,
    counters: ClampCounters | None = None,
    label: str = "",
):
    """Electrode potential u_i = O_i + V_T asinh(j_i / j0_i).

    Exact inversion of the Butler-Volmer sinh for the flux imposed by the
    cell current.
    """
    scalar = np.isscalar(xi_surf) or np.ndim(xi_surf) == 0
    xi = clamp_stoichiometry(xi_surf, counters, label)
    j0 = exchange_current(electrode, xi, theta, counters, label)
    if np.any(j0 == 0.0):
        raise KineticsError(
            f"exchange current underflow on electrode {label or '?'} at xi={xi!r}"
        )
    j = boundary_flux(electrode, i_cell)
    v_t = thermal_voltage(theta)
    out = rk_ocv(electrode, xi, theta, counters, label) + v_t * np.arcsinh(j / j0)
    return float(out) if scalar else out
