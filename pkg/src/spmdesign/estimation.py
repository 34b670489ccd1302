"""Multi-dataset bound-constrained least squares, Hessian conditioning and
the randomized-restart study harness.

The cost is J(mu) = 1/2 || e(mu) ||_2^2 with e the stacked relative errors
(v - w)/w over all data blocks.  Minimization uses a trust-region reflective
solver with a forward-difference Jacobian (reflected at the box bounds).
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .config import EstimationConfig, StudyConfig
from .errors import DataError, SimulationError
from .parameters import MU_LOWER, MU_UPPER, MU_NAMES, N_PARAMETERS
from .profiles import CurrentProfile
from .simulate import CellModel, default_model, simulate

PHASES = ("prep", "impulse", "rest")


@dataclass(frozen=True)
class DataBlock:
    """One recorded (or virtual) input: applied current, initial voltage and
    sampled voltages on the block's own time grid (t = 0 at profile start)."""

    input_id: str
    times: np.ndarray
    voltages: np.ndarray          # measured/virtual data w, strictly positive
    profile: CurrentProfile
    v0: float
    phases: np.ndarray | None = None   # per-sample label from PHASES

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        w = np.asarray(self.voltages, dtype=float)
        if t.ndim != 1 or t.shape != w.shape or t.size == 0:
            raise DataError(f"block {self.input_id}: malformed time/voltage arrays")
        if np.any(np.diff(t) <= 0):
            raise DataError(f"block {self.input_id}: time grid not strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise DataError(f"block {self.input_id}: non-finite samples")
        bad = np.flatnonzero(w <= 0)
        if bad.size:
            raise DataError(
                f"block {self.input_id}: non-positive voltage at sample {bad[0]} "
                f"(t={t[bad[0]]}); relative errors are undefined"
            )
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "voltages", w)
        if self.phases is not None:
            p = np.asarray(self.phases)
            if p.shape != t.shape:
                raise DataError(f"block {self.input_id}: phase labels do not match grid")
            object.__setattr__(self, "phases", p)

    @property
    def n_samples(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class DataSet:
    """Ordered collection of data blocks.

    `truth_mu` is carried for error reporting on virtual data only; the
    estimator never reads it.
    """

    blocks: tuple
    provenance: str = "virtual"      # "virtual" | "measured"
    truth_mu: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.provenance not in ("virtual", "measured"):
            raise DataError(f"unknown provenance {self.provenance!r}")

    @property
    def n_samples(self) -> int:
        return sum(b.n_samples for b in self.blocks)

    def subset(self, n_blocks: int) -> "DataSet":
        return DataSet(self.blocks[:n_blocks], self.provenance, self.truth_mu)


def _block_residual(mu, block: DataBlock, model: CellModel) -> np.ndarray:
    trace = simulate(mu, block.profile, v0=block.v0, model=model)
    if trace.times.size == block.times.size and np.array_equal(trace.times, block.times):
        v = trace.voltages
    else:
        v = np.interp(block.times, trace.times, trace.voltages)
    return (v - block.voltages) / block.voltages


def residuals(
    mu: np.ndarray,
    dataset: DataSet,
    *,
    model: CellModel | None = None,
    n_threads: int = 1,
) -> np.ndarray:
    """Stacked relative errors [(v-w)/w] over all blocks, in block order."""
    mdl = model or default_model()
    if not dataset.blocks:
        raise DataError("dataset has no blocks")
    if n_threads > 1 and len(dataset.blocks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(lambda b: _block_residual(mu, b, mdl), dataset.blocks))
    else:
        parts = [_block_residual(mu, b, mdl) for b in dataset.blocks]
    return np.concatenate(parts)


def cost(mu, dataset, *, model=None, n_threads: int = 1) -> float:
    e = residuals(mu, dataset, model=model, n_threads=n_threads)
    return 0.5 * float(e @ e)


@dataclass(frozen=True)
class EstimationResult:
    mu_hat: np.ndarray
    cost: float
    residual: np.ndarray
    converged: bool
    message: str
    n_evaluations: int
    n_iterations: int
    wall_time: float
    mu_init: np.ndarray


def estimate(
    mu_init: np.ndarray,
    dataset: DataSet,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    *,
    model: CellModel | None = None,
    config: EstimationConfig | None = None,
) -> EstimationResult:
    """Bound-constrained nonlinear least squares from a single start point.

    Trust-region reflective iterations with a forward-difference Jacobian
    (relative step `diff_step`, one-sided away from active bounds);
    terminates on relative cost decrease < ftol, step < xtol, or the
    iteration cap.  A trial point whose simulation fails gets a constant
    large residual, which the trust region rejects and shrinks around.
    """
    cfg = config or EstimationConfig()
    mdl = model or default_model()
    lo, hi = bounds if bounds is not None else (MU_LOWER, MU_UPPER)
    mu_init = np.clip(np.asarray(mu_init, dtype=float), lo, hi)

    try:
        r0 = residuals(mu_init, dataset, model=mdl, n_threads=cfg.n_threads)
    except SimulationError as exc:
        return EstimationResult(
            mu_hat=mu_init, cost=np.inf, residual=np.array([]), converged=False,
            message=f"initial point not simulable: {exc}", n_evaluations=1,
            n_iterations=0, wall_time=0.0, mu_init=mu_init,
        )
    n_res = r0.size
    failures = [0]

    def fun(x):
        try:
            return residuals(x, dataset, model=mdl, n_threads=cfg.n_threads)
        except SimulationError:
            failures[0] += 1
            return np.full(n_res, cfg.failure_residual)

    t0 = time.perf_counter()
    sol = least_squares(
        fun,
        mu_init,
        bounds=(lo, hi),
        method="trf",
        jac="2-point",
        diff_step=cfg.diff_step,
        ftol=cfg.ftol,
        xtol=cfg.xtol,
        gtol=None,
        max_nfev=cfg.max_iterations,
    )
    wall = time.perf_counter() - t0

    converged = bool(sol.success and sol.cost < 0.25 * (cfg.failure_residual**2) * n_res)
    message = sol.message
    if failures[0]:
        message += f" ({failures[0]} failed trial simulations)"
    return EstimationResult(
        mu_hat=np.clip(sol.x, lo, hi),
        cost=float(sol.cost),
        residual=sol.fun,
        converged=converged,
        message=message,
        n_evaluations=int(sol.nfev),
        n_iterations=int(sol.njev if sol.njev is not None else sol.nfev),
        wall_time=wall,
        mu_init=mu_init,
    )


# ---------------------------------------------------------------------------
# Hessian conditioning
# ---------------------------------------------------------------------------

def fd_jacobian(fun, x, step: float, lower, upper) -> np.ndarray:
    """Forward-difference Jacobian with steps reflected at the box bounds."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    cols = []
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        if x[j] + h > upper[j]:
            h = -h
            if x[j] + h < lower[j]:
                raise ValueError(f"box too narrow for FD step at component {j}")
        xp = x.copy()
        xp[j] += h
        cols.append((np.asarray(fun(xp)) - f0) / h)
    return np.column_stack(cols)


def condition_number(h: np.ndarray, tol: float = 1e-14):
    """(beta, eigenvalues desc).  beta is inf when lambda_min <= tol*lambda_max."""
    eig = np.linalg.eigvalsh(np.asarray(h, dtype=float))[::-1]
    lam_max, lam_min = float(eig[0]), float(eig[-1])
    if lam_min <= tol * max(lam_max, 0.0) or lam_min <= 0.0:
        return float("inf"), eig
    return lam_max / lam_min, eig


@dataclass(frozen=True)
class ConditioningResult:
    beta: float                   # lambda_max / lambda_min, inf if singular
    eigenvalues: np.ndarray       # descending
    hessian: np.ndarray
    lambda_min: float
    lambda_max: float


def hessian_conditioning(
    mu_star: np.ndarray,
    dataset: DataSet,
    *,
    model: CellModel | None = None,
    config: EstimationConfig | None = None,
    full_hessian: bool = False,
) -> ConditioningResult:
    """Condition number of the estimation Hessian at mu_star.

    Default is the Gauss-Newton approximation H = G^T G with G the
    forward-difference Jacobian of the stacked relative residuals (exact at
    zero residual); `full_hessian` switches to a central second-difference
    Hessian of J for diagnostics.
    """
    cfg = config or EstimationConfig()
    mdl = model or default_model()
    mu_star = np.asarray(mu_star, dtype=float)

    if full_hessian:
        h = _fd_hessian(lambda x: cost(x, dataset, model=mdl, n_threads=cfg.n_threads),
                        mu_star, 1e-4)
    else:
        g = fd_jacobian(
            lambda x: residuals(x, dataset, model=mdl, n_threads=cfg.n_threads),
            mu_star, cfg.diff_step, MU_LOWER, MU_UPPER,
        )
        h = g.T @ g
    h = 0.5 * (h + h.T)
    beta, eig = condition_number(h)
    return ConditioningResult(
        beta=beta, eigenvalues=eig, hessian=h,
        lambda_min=float(eig[-1]), lambda_max=float(eig[0]),
    )


def _fd_hessian(fun, x, step):
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.empty((n, n))
    f0 = fun(x)
    for i in range(n):
        for j in range(i, n):
            xpp = x.copy(); xpp[i] += step; xpp[j] += step
            xpm = x.copy(); xpm[i] += step; xpm[j] -= step
            xmp = x.copy(); xmp[i] -= step; xmp[j] += step
            xmm = x.copy(); xmm[i] -= step; xmm[j] -= step
            h[i, j] = h[j, i] = (fun(xpp) - fun(xpm) - fun(xmp) + fun(xmm)) / (4 * step * step)
    del f0
    return h


# ---------------------------------------------------------------------------
# randomized-restart study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyRun:
    run: int
    converged: bool
    cost: float
    mu_hat: np.ndarray
    rel_err: float | None
    wall_time: float


@dataclass(frozen=True)
class StudyResult:
    runs: tuple
    seed: int
    truth_mu: np.ndarray | None = None
    config: StudyConfig = field(default_factory=StudyConfig)

    def mu_matrix(self) -> np.ndarray:
        return np.vstack([r.mu_hat for r in self.runs])

    def success_fraction(self, threshold: float | None = None) -> float:
        """Fraction of runs with relative parameter error below threshold."""
        if self.truth_mu is None:
            raise DataError("success fraction needs a known truth parameter")
        thr = threshold if threshold is not None else self.config.success_rel_err
        ok = [r for r in self.runs if r.rel_err is not None and r.rel_err <= thr]
        return len(ok) / len(self.runs)

    def histograms(self, bins: int | None = None) -> list[dict]:
        """Per-parameter histogram of the optimizers over the admissible box."""
        nb = bins if bins is not None else self.config.hist_bins
        mus = self.mu_matrix()
        out = []
        for j in range(N_PARAMETERS):
            edges = np.linspace(MU_LOWER[j], MU_UPPER[j], nb + 1)
            counts, _ = np.histogram(mus[:, j], bins=edges)
            out.append(
                {
                    "parameter": MU_NAMES[j],
                    "edges": edges.tolist(),
                    "counts": counts.tolist(),
                    "truth": None if self.truth_mu is None else float(self.truth_mu[j]),
                }
            )
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run", "converged", "J", *MU_NAMES])
            for r in self.runs:
                writer.writerow(
                    [r.run, int(r.converged), f"{r.cost:.15g}",
                     *[f"{x:.15g}" for x in r.mu_hat]]
                )


def _study_single(args):
    idx, mu0, dataset, model, est_config, truth = args
    result = estimate(mu0, dataset, model=model, config=est_config)
    rel = None
    if truth is not None:
        rel = float(np.linalg.norm(result.mu_hat - truth) / np.linalg.norm(truth))
    return StudyRun(
        run=idx, converged=result.converged, cost=result.cost,
        mu_hat=result.mu_hat, rel_err=rel, wall_time=result.wall_time,
    )


def restart_study(
    dataset: DataSet,
    n_runs: int = 100,
    seed: int = 12345,
    *,
    model: CellModel | None = None,
    config: StudyConfig | None = None,
    est_config: EstimationConfig | None = None,
    truth_mu: np.ndarray | None = None,
    n_jobs: int | None = None,
) -> StudyResult:
    """`n_runs` estimations from starts drawn uniformly in the admissible box.

    Deterministic for a fixed seed; runs are independent and can execute on
    a process pool.  Individual failures are recorded, not fatal.
    """
    cfg = config or StudyConfig()
    ecfg = est_config or EstimationConfig(n_threads=1)
    mdl = model or default_model()
    truth = truth_mu if truth_mu is not None else dataset.truth_mu
    jobs = n_jobs if n_jobs is not None else cfg.n_jobs

    rng = np.random.default_rng(seed)
    starts = rng.uniform(MU_LOWER, MU_UPPER, size=(n_runs, N_PARAMETERS))
    tasks = [(i, starts[i], dataset, mdl, ecfg, truth) for i in range(n_runs)]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_study_single, tasks, chunksize=4))
    else:
        runs = [_study_single(t) for t in tasks]
    return StudyResult(runs=tuple(runs), seed=seed, truth_mu=truth, config=cfg)
