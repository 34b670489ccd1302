"""Finite-difference output sensitivities, information matrices and the
D-optimality design objectives."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import SimulationError
from .parameters import MU_LOWER, MU_UPPER, N_PARAMETERS, MU_NAMES
from .profiles import InputArray
from .simulate import CellModel, default_model, simulate

# Finite sentinel returned by the design objectives when the information
# matrix is singular or a trial simulation fails; ordered above every
# regular objective value so line searches can retreat.
SINGULAR_SENTINEL = 1e6

DEFAULT_NU = 1e-3     # scaled-parameter perturbation
DEFAULT_GAMMA = 1e-4  # input-norm regularization weight
PSD_SLACK = 1e-10     # tolerated negative eigenvalue, relative to trace


@dataclass(frozen=True)
class SensitivityBundle:
    """Columns d v / d mu_j on the simulation grid.

    `directions[j]` is +1 for a forward difference and -1 where the upper
    bound forced a backward difference.
    """

    matrix: np.ndarray           # (K+1, d)
    times: np.ndarray            # (K+1,)
    base_voltages: np.ndarray    # (K+1,)
    nu: float
    directions: np.ndarray       # (d,) of +-1
    mu: np.ndarray               # (d,)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", *[f"s_{name}" for name in MU_NAMES]])
            for k, t in enumerate(self.times):
                writer.writerow([f"{t:.10g}", *[f"{x:.12g}" for x in self.matrix[k]]])


def perturbation_directions(mu: np.ndarray, nu: float) -> np.ndarray:
    """+1 where mu_j + nu stays admissible, else -1 (backward difference)."""
    mu = np.asarray(mu, dtype=float)
    return np.where(mu + nu <= MU_UPPER, 1.0, -1.0)


def sensitivities(
    mu: np.ndarray,
    current,
    *,
    v0: float | None = None,
    nu: float = DEFAULT_NU,
    model: CellModel | None = None,
    n_threads: int = 1,
) -> SensitivityBundle:
    """One-sided finite-difference sensitivities of the voltage output.

    Runs d+1 simulations (base plus one per scaled parameter); the
    perturbed runs of one bundle are independent pure calls and may be
    evaluated on a small thread pool.
    """
    mu = np.asarray(mu, dtype=float)
    mdl = model or default_model()
    dirs = perturbation_directions(mu, nu)

    def run(vec):
        return simulate(vec, current, v0=v0, model=mdl).voltages

    base_trace = simulate(mu, current, v0=v0, model=mdl)
    perturbed = []
    for j in range(N_PARAMETERS):
        vec = mu.copy()
        vec[j] += dirs[j] * nu
        perturbed.append(vec)

    try:
        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                results = list(pool.map(run, perturbed))
        else:
            results = [run(vec) for vec in perturbed]
    except SimulationError as exc:
        raise SimulationError(f"sensitivity perturbation failed: {exc}") from exc

    cols = [
        (res - base_trace.voltages) / (dirs[j] * nu) for j, res in enumerate(results)
    ]
    return SensitivityBundle(
        matrix=np.column_stack(cols),
        times=base_trace.times,
        base_voltages=base_trace.voltages,
        nu=nu,
        directions=dirs,
        mu=mu.copy(),
    )


@dataclass(frozen=True)
class InformationMatrix:
    """Trapezoidal L2 Gram matrix of the sensitivity columns.

    `root` is the quadrature-weighted sensitivity stack R with R^T R equal
    to the matrix; determinants are far better conditioned through the
    singular values of R than through the eigenvalues of the Gram matrix,
    whose small end drowns in roundoff (eps times the largest eigenvalue).
    """

    matrix: np.ndarray
    mu: np.ndarray | None = None
    input_id: str = ""
    root: np.ndarray | None = None

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.matrix, delimiter=",", fmt="%.15g")


def _as_matrix(m) -> np.ndarray:
    return m.matrix if isinstance(m, InformationMatrix) else np.asarray(m, dtype=float)


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    """Composite trapezoid quadrature weights on an arbitrary grid."""
    t = np.asarray(times, dtype=float)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def information_matrix(
    bundle: SensitivityBundle | np.ndarray,
    times: np.ndarray | None = None,
    *,
    mu: np.ndarray | None = None,
    input_id: str = "",
) -> InformationMatrix:
    """M_jl = <s^j, s^l>_L2(0,t_f) by the trapezoidal rule, symmetrized."""
    if isinstance(bundle, SensitivityBundle):
        s = bundle.matrix
        t = bundle.times
        mu = bundle.mu if mu is None else mu
    else:
        s = np.asarray(bundle, dtype=float)
        if times is None:
            raise ValueError("a time grid is required with a bare sensitivity matrix")
        t = np.asarray(times, dtype=float)
    if s.shape[0] != t.size:
        raise ValueError("sensitivity rows must match the time grid")
    w = trapezoid_weights(t)
    root = np.sqrt(w)[:, None] * s
    m = root.T @ root
    m = 0.5 * (m + m.T)
    trace = float(np.trace(m))
    min_eig = float(np.linalg.eigvalsh(m)[0])
    if min_eig < -PSD_SLACK * max(trace, 1.0):
        raise ValueError(f"information matrix not PSD: min eigenvalue {min_eig:.3e}")
    return InformationMatrix(
        matrix=m, mu=None if mu is None else np.asarray(mu), input_id=input_id, root=root
    )


def d_criterion(m) -> float:
    """D-optimality uncertainty -ln det(M) via the eigenvalue form.

    Returns +inf when the matrix is numerically singular.
    """
    eig = np.linalg.eigvalsh(_as_matrix(m))
    if np.any(eig <= 1e-300):
        return math.inf
    return float(-np.sum(np.log(eig)))


def log10_det_uncertainty(total) -> float | None:
    """-log10 det of an accumulated information matrix; None if singular."""
    eig = np.linalg.eigvalsh(_as_matrix(total))
    if np.any(eig <= 1e-300):
        return None
    return float(-np.sum(np.log10(eig)))


def accumulate(prior, extra=None) -> np.ndarray:
    """Sum of information matrices (empty prior allowed)."""
    total = np.zeros((N_PARAMETERS, N_PARAMETERS))
    for m in prior:
        total = total + _as_matrix(m)
    if extra is not None:
        total = total + _as_matrix(extra)
    return total


def _matrix_root(m) -> np.ndarray:
    """A stack R with R^T R = M, from the stored root or an eigen square root."""
    if isinstance(m, InformationMatrix) and m.root is not None:
        return m.root
    mat = _as_matrix(m)
    lam, q = np.linalg.eigh(mat)
    lam = np.clip(lam, 0.0, None)
    return (q * np.sqrt(lam)).T


def stack_roots(prior, extra=None) -> np.ndarray:
    """Vertical stack whose Gram matrix is the accumulated information."""
    parts = [_matrix_root(m) for m in prior]
    if extra is not None:
        parts.append(_matrix_root(extra))
    if not parts:
        return np.zeros((0, N_PARAMETERS))
    return np.vstack(parts)


def log10_det_from_root(stack: np.ndarray) -> float | None:
    """-log10 det(R^T R) through singular values; None if singular."""
    if stack.shape[0] < N_PARAMETERS:
        return None
    sigma = np.linalg.svd(stack, compute_uv=False)
    if sigma.size < N_PARAMETERS or sigma[N_PARAMETERS - 1] <= 1e-150:
        return None
    return float(-2.0 * np.sum(np.log10(sigma[:N_PARAMETERS])))


def objective_value(total, design_vector: np.ndarray, gamma: float) -> float:
    """-log10 det(total) + gamma * ||design_vector||_2^2 with the singular
    sentinel; the seam used by both frameworks and by the tests."""
    x = np.asarray(design_vector, dtype=float)
    reg = gamma * float(x @ x)
    val = log10_det_uncertainty(total)
    if val is None:
        return SINGULAR_SENTINEL + reg
    return val + reg


def objective_value_root(root_stack: np.ndarray, design_vector: np.ndarray, gamma: float) -> float:
    """Same objective as `objective_value`, computed from a root stack."""
    x = np.asarray(design_vector, dtype=float)
    reg = gamma * float(x @ x)
    val = log10_det_from_root(root_stack)
    if val is None:
        return SINGULAR_SENTINEL + reg
    return val + reg


def design_objective(
    u: InputArray,
    mu: np.ndarray,
    prior=(),
    gamma: float = DEFAULT_GAMMA,
    *,
    nu: float = DEFAULT_NU,
    model: CellModel | None = None,
    n_threads: int = 1,
) -> float:
    """Design uncertainty of input u given already-collected information."""
    try:
        bundle = sensitivities(mu, u, nu=nu, model=model, n_threads=n_threads)
    except SimulationError:
        return SINGULAR_SENTINEL + gamma * float(u.as_vector() @ u.as_vector())
    m_new = information_matrix(bundle)
    return objective_value_root(stack_roots(prior, m_new), u.as_vector(), gamma)


def closeness_penalty(x: np.ndarray, previous_vectors) -> float:
    """sum over previous inputs of 1 / (1 + 100 ||x - x_prev||_inf)."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for prev in previous_vectors:
        dist = float(np.max(np.abs(x - np.asarray(prev, dtype=float))))
        total += 1.0 / (1.0 + 100.0 * dist)
    return total


def penalized_objective(
    u: InputArray,
    mu: np.ndarray,
    prior=(),
    previous_inputs=(),
    gamma: float = DEFAULT_GAMMA,
    *,
    nu: float = DEFAULT_NU,
    model: CellModel | None = None,
    n_threads: int = 1,
) -> float:
    """Design objective plus the closeness penalty against previous inputs
    (the initial voltage participates in the infinity norm)."""
    base = design_objective(u, mu, prior, gamma, nu=nu, model=model, n_threads=n_threads)
    vectors = [p.as_vector() if isinstance(p, InputArray) else p for p in previous_inputs]
    return base + closeness_penalty(u.as_vector(), vectors)
