"""Forward simulation of the two-particle cell model.

Radial lithium transport in each spherical particle is discretized with a
conservative finite-volume scheme on uniform shells (r^2-weighted volumes,
flux only through the outer face) and stepped with implicit Euler.  Because
the imposed cell current fixes the boundary flux directly, every step is a
linear solve; it is carried out exactly in the eigenbasis of the symmetrized
tridiagonal operator, which turns a whole trajectory into one first-order
recurrence per mode.  The nonlinear voltage map (OCV + Butler-Volmer
inversion + ohmic term) is evaluated on the stored surface stoichiometries.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.linalg import eigh_tridiagonal

from .config import ModelConfig
from .constants import FARADAY, thermal_voltage
from .errors import (
    NonMonotoneOCVError,
    SaturationError,
    SimulationError,
    VoltageUnreachableError,
)
from .ocv import (
    CLAMP_EPSILON,
    ClampCounters,
    _exchange_current_core,
    boundary_flux,
    clamp_stoichiometry,
    ocv_integral_fast,
    rk_ocv,
)
from .parameters import CellParameters, default_cell, is_admissible, unscale_parameters
from .profiles import CurrentProfile, InputArray, VoltageTrace


@dataclass(frozen=True)
class CellModel:
    """Template cell (fixed constants) plus discretization settings."""

    template: CellParameters
    config: ModelConfig


_DEFAULT_MODEL: CellModel | None = None


def default_model() -> CellModel:
    global _DEFAULT_MODEL
    if _DEFAULT_MODEL is None:
        _DEFAULT_MODEL = CellModel(default_cell(), ModelConfig())
    return _DEFAULT_MODEL


# ---------------------------------------------------------------------------
# radial finite-volume operator, diagonalized
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _geometry(n_shells: int, radius: float):
    dr = radius / n_shells
    faces = np.arange(n_shells + 1) * dr
    volumes = (faces[1:] ** 3 - faces[:-1] ** 3) / 3.0   # 4*pi dropped throughout
    areas = faces**2
    sq_v = np.sqrt(volumes)
    for arr in (faces, volumes, areas, sq_v):
        arr.setflags(write=False)
    return dr, faces, volumes, areas, sq_v


@lru_cache(maxsize=512)
def _modes(diffusion: float, n_shells: int, radius: float):
    """Eigenpairs of the symmetrized (positive-semidefinite) diffusion operator.

    The structurally zero eigenvalue (lithium conservation) is clamped to
    exactly zero so rest phases are mass-exact.
    """
    dr, _faces, volumes, areas, sq_v = _geometry(n_shells, radius)
    cond = diffusion * areas[1:-1] / dr          # internal face conductances
    diag = np.zeros(n_shells)
    diag[:-1] += cond / volumes[:-1]
    diag[1:] += cond / volumes[1:]
    off = -cond / np.sqrt(volumes[:-1] * volumes[1:])
    lam, q = eigh_tridiagonal(diag, off)
    lam[lam < 1e-12 * lam[-1]] = 0.0
    alpha = q.T @ sq_v                            # mass weights in mode space
    lam.setflags(write=False)
    q.setflags(write=False)
    alpha.setflags(write=False)
    return lam, q, alpha


@njit(cache=True, nogil=True)
def _surface_kernel(a, g, y0, flux, coef):  # pragma: no cover - compiled
    n = a.size
    steps = flux.size
    surf = np.empty(steps + 1)
    y = y0.copy()
    s = 0.0
    for m in range(n):
        s += coef[m] * y[m]
    surf[0] = s
    for k in range(steps):
        f = flux[k]
        s = 0.0
        for m in range(n):
            y[m] = a[m] * y[m] + g[m] * f
            s += coef[m] * y[m]
        surf[k + 1] = s
    return surf


@njit(cache=True, nogil=True)
def _modes_kernel(a, g, y0, flux):  # pragma: no cover - compiled
    n = a.size
    steps = flux.size
    out = np.empty((n, steps + 1))
    out[:, 0] = y0
    for k in range(steps):
        f = flux[k]
        for m in range(n):
            out[m, k + 1] = a[m] * out[m, k] + g[m] * f
    return out


def _recurrence_coeffs(lam, q, sq_v, areas, dt, xi0):
    a = 1.0 / (1.0 + dt * lam)
    c = (areas[-1] / sq_v[-1]) * q[-1, :]
    g = dt * c * a
    y0 = xi0 * (q.T @ sq_v)
    coef = q[-1, :] / sq_v[-1]
    return a, g, y0, coef


def particle_surface_trace(
    diffusion: float,
    xi0: float,
    flux: np.ndarray,
    dt: float,
    n_shells: int,
    radius: float = 1.0,
) -> np.ndarray:
    """Surface stoichiometry on the nodes k=0..K for a given inward surface
    flux density per interval (implicit Euler, exact modal form)."""
    lam, q, _alpha = _modes(diffusion, n_shells, radius)
    _dr, _f, _vol, areas, sq_v = _geometry(n_shells, radius)
    a, g, y0, coef = _recurrence_coeffs(lam, q, sq_v, areas, dt, xi0)
    return _surface_kernel(a, g, y0, np.ascontiguousarray(flux, dtype=float), coef)


@dataclass(frozen=True)
class ParticleDetail:
    """Full radial solution of one particle, for diagnostics and oracles."""

    concentrations: np.ndarray       # (n_shells, K+1), unclamped
    mass: np.ndarray                 # (K+1,) total scaled lithium (sum vol*xi)
    expected_mass_increments: np.ndarray  # (K,) dt * surface_area * flux
    surface: np.ndarray              # (K+1,) unclamped surface stoichiometry


def particle_detail(
    diffusion: float,
    xi0: float,
    flux: np.ndarray,
    dt: float,
    n_shells: int,
    radius: float = 1.0,
) -> ParticleDetail:
    lam, q, alpha = _modes(diffusion, n_shells, radius)
    _dr, _f, _vol, areas, sq_v = _geometry(n_shells, radius)
    a, g, y0, coef = _recurrence_coeffs(lam, q, sq_v, areas, dt, xi0)
    flux = np.ascontiguousarray(flux, dtype=float)
    modes = _modes_kernel(a, g, y0, flux)
    conc = (q / sq_v[:, None]) @ modes
    mass = alpha @ modes
    expected = dt * areas[-1] * flux
    return ParticleDetail(conc, mass, expected, coef @ modes)


# ---------------------------------------------------------------------------
# initial cathode stoichiometry from the rest voltage
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16384)
def _cathode_root(cathode, theta: float, rhs: float, scan_points: int, tol: float) -> float:
    """Solve O_C(xi) = rhs on the clamp window by scan + bracketing bisection."""
    grid = np.linspace(CLAMP_EPSILON, 1.0 - CLAMP_EPSILON, scan_points)
    vals = rk_ocv(cathode, grid, theta) - rhs
    zero_hits = np.flatnonzero(vals == 0.0)
    sign_changes = np.flatnonzero(vals[:-1] * vals[1:] < 0.0)
    n_roots = zero_hits.size + sign_changes.size
    if n_roots == 0:
        raise VoltageUnreachableError(
            f"no cathode stoichiometry reaches the requested rest potential {rhs:.6f} V"
        )
    if n_roots > 1:
        raise NonMonotoneOCVError(
            f"{n_roots} candidate roots for rest potential {rhs:.6f} V; "
            "cathode OCV is not monotone on the admissible window"
        )
    if zero_hits.size:
        return float(grid[zero_hits[0]])
    i = sign_changes[0]
    lo, hi = float(grid[i]), float(grid[i + 1])
    g_lo = float(vals[i])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g_mid = float(rk_ocv(cathode, mid, theta)) - rhs
        if abs(g_mid) <= tol:
            return mid
        if g_lo * g_mid < 0.0:
            hi = mid
        else:
            lo, g_lo = mid, g_mid
    raise SimulationError(
        f"initial-voltage bisection stalled; final residual {g_mid:.3e} V exceeds {tol:.1e}"
    )


def initial_cathode_soc(
    params: CellParameters, v0: float, config: ModelConfig | None = None
) -> float:
    """Cathode stoichiometry whose rest voltage O_C(xi) + O_A(xi_A0) equals v0."""
    cfg = config or ModelConfig()
    if not np.isfinite(v0):
        raise SimulationError("initial voltage must be finite")
    rhs = v0 - rk_ocv(params.anode, params.anode_initial_soc, params.temperature)
    return _cathode_root(
        params.cathode, params.temperature, round(rhs, 12), cfg.scan_points,
        cfg.root_tolerance,
    )


# ---------------------------------------------------------------------------
# full simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellState:
    """Radial concentration snapshot of both particles at one time."""

    time: float
    cathode: np.ndarray
    anode: np.ndarray


@dataclass(frozen=True)
class SimulationDetail:
    """Optional diagnostics attached to a simulation."""

    counters: ClampCounters
    initial_socs: dict
    particles: dict                  # label -> ParticleDetail

    def state_at(self, k: int, dt: float) -> CellState:
        return CellState(
            time=k * dt,
            cathode=np.clip(self.particles["cathode"].concentrations[:, k], 0.0, 1.0),
            anode=np.clip(self.particles["anode"].concentrations[:, k], 0.0, 1.0),
        )


def _resolve_input(current, v0):
    if isinstance(current, InputArray):
        if v0 is not None:
            raise SimulationError("v0 is taken from the InputArray; do not pass both")
        return current.profile(), current.v0
    if isinstance(current, CurrentProfile):
        if v0 is None:
            raise SimulationError("a bare current profile requires an explicit v0")
        return current, float(v0)
    raise SimulationError(f"unsupported current input type {type(current)!r}")


def _flux_scale(electrode) -> float:
    # cell current -> inward surface flux density of scaled concentration
    return electrode.rho_r_third / (electrode.active_mass * FARADAY * electrode.rho_cm)


def _electrode_voltage(electrode, xi_clamped, i_nodes, theta, counters, label):
    o_vals = rk_ocv(electrode, xi_clamped, theta, counters, label)
    i_vals = ocv_integral_fast(electrode, xi_clamped, theta, counters, label)
    j0 = _exchange_current_core(electrode.log_rate, o_vals, i_vals, xi_clamped, theta)
    j = boundary_flux(electrode, i_nodes)
    return o_vals + thermal_voltage(theta) * np.arcsinh(j / j0)


def simulate(
    mu,
    current,
    *,
    v0: float | None = None,
    model: CellModel | None = None,
    detail: bool = False,
):
    """Deterministic voltage response of the cell.

    `mu` is a scaled parameter vector (or a full CellParameters for direct
    use); `current` an InputArray or a CurrentProfile (then `v0` is
    required).  Returns a VoltageTrace on the internal grid t_k = k*dt, or
    (trace, SimulationDetail) when `detail` is set.
    """
    mdl = model or default_model()
    cfg = mdl.config
    if isinstance(mu, CellParameters):
        params = mu
    else:
        mu = np.asarray(mu, dtype=float)
        if not is_admissible(mu, atol=1e-9):
            raise SimulationError("scaled parameter vector outside the admissible box")
        params = unscale_parameters(mu, mdl.template)

    profile, v0_val = _resolve_input(current, v0)
    i_intervals = profile.interval_amplitudes(cfg.dt)
    i_nodes = profile.node_values(cfg.dt)
    n_steps = i_intervals.size
    times = np.arange(n_steps + 1) * cfg.dt

    theta = params.temperature
    xi_c0 = initial_cathode_soc(params, v0_val, cfg)
    xi_a0 = params.anode_initial_soc

    counters = ClampCounters()
    voltage = i_nodes * params.inner_resistance
    particles = {}
    for label, electrode, xi0 in (
        ("cathode", params.cathode, xi_c0),
        ("anode", params.anode, xi_a0),
    ):
        flux = i_intervals * _flux_scale(electrode)
        surf = particle_surface_trace(
            electrode.diffusion, xi0, flux, cfg.dt, cfg.n_shells, electrode.radius
        )
        xi = clamp_stoichiometry(surf, counters, label)
        voltage = voltage + _electrode_voltage(electrode, xi, i_nodes, theta, counters, label)
        if detail:
            particles[label] = particle_detail(
                electrode.diffusion, xi0, flux, cfg.dt, cfg.n_shells, electrode.radius
            )

    budget = cfg.clamp_budget_fraction * 2 * (n_steps + 1)
    if counters.surface_clamps > budget:
        raise SaturationError(
            f"concentration saturation: {counters.surface_clamps} clamp events "
            f"exceed the budget of {budget:.0f} ({cfg.clamp_budget_fraction:.0%} of outputs)"
        )

    trace = VoltageTrace(times, voltage, i_nodes)
    if not detail:
        return trace
    return trace, SimulationDetail(
        counters=counters,
        initial_socs={"cathode": xi_c0, "anode": xi_a0},
        particles=particles,
    )
