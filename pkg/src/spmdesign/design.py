"""The two adaptive input-design loops.

Both frameworks alternate three phases per iteration: design a new input by
minimizing the penalized D-optimality objective over the current box,
acquire data for it, and re-estimate the parameters on everything collected
so far.  The collection framework designs independent short inputs (each
with its own initial voltage); the concatenated framework grows one long
profile segment by segment, with earlier segments frozen and a shared
initial voltage.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import fmin_l_bfgs_b

from .config import DesignConfig, EstimationConfig, StudyConfig
from .errors import ConfigError, ProfileError, SimulationError
from .estimation import DataSet, estimate, cost as estimation_cost, hessian_conditioning
from .parameters import MU_LOWER, MU_UPPER, mu_midpoint
from .profiles import CurrentProfile, InputArray, profile_l2_distance
from .sensitivity import (
    SINGULAR_SENTINEL,
    closeness_penalty,
    information_matrix,
    objective_value_root,
    sensitivities,
    stack_roots,
)
from .simulate import CellModel, default_model


def first_collection_input(config: DesignConfig) -> InputArray:
    """The fixed first input: alternating -1/+1 amperes at 3.7 volts."""
    amps = np.tile([-1.0, 1.0], config.n_amplitudes // 2)
    if amps.size < config.n_amplitudes:
        amps = np.append(amps, -1.0)
    return InputArray(amps, config.initial_v0, config.input_duration)


def stopping_criterion(new_input, previous_inputs, epsilon: float) -> bool:
    """True when the new current is within epsilon (L2 on [0, t_f]) of any
    previous current.  An empty history cannot stop the loop."""
    new_profile = new_input.profile() if isinstance(new_input, InputArray) else new_input
    best = None
    for prev in previous_inputs:
        prev_profile = prev.profile() if isinstance(prev, InputArray) else prev
        d = profile_l2_distance(new_profile, prev_profile)
        best = d if best is None else min(best, d)
    return best is not None and best < epsilon


@dataclass(frozen=True)
class DesignStepInfo:
    objective_start: float
    objective_end: float
    plain_objective: float        # without the closeness penalty
    n_evaluations: int
    warning: str | None


@dataclass
class DesignIteration:
    """Everything recorded at one design iteration."""

    n: int
    input: InputArray | None            # collection framework
    segment: np.ndarray | None          # concatenated framework
    profile: CurrentProfile
    v0: float
    info_matrix: np.ndarray
    mu: np.ndarray
    phi: float
    phi_hat: float
    cost: float | None
    rel_err: float | None
    beta: float | None
    estimation_converged: bool | None
    design_warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "input": None if self.input is None else self.input.to_dict(),
            "segment": None if self.segment is None else np.asarray(self.segment).tolist(),
            "profile": {
                "breakpoints": self.profile.breakpoints.tolist(),
                "amplitudes": self.profile.amplitudes.tolist(),
            },
            "v0": self.v0,
            "info_matrix": np.asarray(self.info_matrix).tolist(),
            "mu": np.asarray(self.mu).tolist(),
            "phi": self.phi,
            "phi_hat": self.phi_hat,
            "cost": self.cost,
            "rel_err": self.rel_err,
            "beta": self.beta,
            "estimation_converged": self.estimation_converged,
            "design_warning": self.design_warning,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignIteration":
        return cls(
            n=d["n"],
            input=None if d["input"] is None else InputArray.from_dict(d["input"]),
            segment=None if d["segment"] is None else np.asarray(d["segment"]),
            profile=CurrentProfile(
                np.asarray(d["profile"]["breakpoints"]),
                np.asarray(d["profile"]["amplitudes"]),
            ),
            v0=d["v0"],
            info_matrix=np.asarray(d["info_matrix"]),
            mu=np.asarray(d["mu"]),
            phi=d["phi"],
            phi_hat=d["phi_hat"],
            cost=d["cost"],
            rel_err=d["rel_err"],
            beta=d["beta"],
            estimation_converged=d["estimation_converged"],
            design_warning=d.get("design_warning"),
        )


@dataclass
class DesignRecord:
    """Chronological design iterations plus run-level metadata."""

    framework: str
    iterations: list = field(default_factory=list)
    mu_initial: np.ndarray | None = None
    stopped_early: bool = False
    stop_reason: str = ""
    seed: int | None = None

    @property
    def final_mu(self) -> np.ndarray:
        return self.iterations[-1].mu

    def inputs(self) -> list:
        """Designed inputs: InputArrays (collection) or the per-iteration
        (profile, v0) pairs (concatenated)."""
        if self.framework == "collection":
            return [it.input for it in self.iterations]
        return [(it.profile, it.v0) for it in self.iterations]

    def final_acquisition(self) -> list:
        """What a lab would actually run: every input for the collection,
        only the final concatenated profile otherwise."""
        if self.framework == "collection":
            return [it.input for it in self.iterations]
        last = self.iterations[-1]
        return [(last.profile, last.v0)]

    def to_json(self, path) -> None:
        doc = {
            "schema_version": 1,
            "framework": self.framework,
            "mu_initial": None if self.mu_initial is None else np.asarray(self.mu_initial).tolist(),
            "stopped_early": self.stopped_early,
            "stop_reason": self.stop_reason,
            "seed": self.seed,
            "iterations": [it.to_dict() for it in self.iterations],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "DesignRecord":
        with open(path) as fh:
            doc = json.load(fh)
        rec = cls(
            framework=doc["framework"],
            mu_initial=None if doc["mu_initial"] is None else np.asarray(doc["mu_initial"]),
            stopped_early=doc["stopped_early"],
            stop_reason=doc["stop_reason"],
            seed=doc.get("seed"),
        )
        rec.iterations = [DesignIteration.from_dict(d) for d in doc["iterations"]]
        return rec

    def summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "phi", "J", "rel_err", "beta"])
            for it in self.iterations:
                writer.writerow(
                    [
                        it.n,
                        f"{it.phi_hat:.12g}",
                        "" if it.cost is None else f"{it.cost:.12g}",
                        "" if it.rel_err is None else f"{it.rel_err:.12g}",
                        "" if it.beta is None else f"{it.beta:.12g}",
                    ]
                )


# ---------------------------------------------------------------------------
# design optimization steps
# ---------------------------------------------------------------------------

def _collection_objective_factory(mu, prior_stack, previous_vectors, config, model, n_threads):
    t_f = config.input_duration

    def objective(x):
        u = InputArray.from_vector(x, t_f)
        try:
            bundle = sensitivities(mu, u, nu=config.nu, model=model, n_threads=n_threads)
            root_new = information_matrix(bundle).root
        except (SimulationError, ProfileError):
            return SINGULAR_SENTINEL + config.gamma * float(x @ x)
        stack = np.vstack([prior_stack, root_new]) if prior_stack.size else root_new
        val = objective_value_root(stack, x, config.gamma)
        return val + closeness_penalty(x, previous_vectors)

    return objective


def design_step(
    mu: np.ndarray,
    prior,
    previous_inputs,
    config: DesignConfig,
    *,
    model: CellModel | None = None,
    start: InputArray | None = None,
    n_threads: int = 1,
) -> tuple[InputArray, DesignStepInfo]:
    """One bound-constrained quasi-Newton descent of the penalized objective.

    Gradients are forward finite differences on the design vector; the
    returned input never leaves the box and never increases the objective
    relative to the start point (on failure the start point is returned
    with a warning).
    """
    mdl = model or default_model()
    prior_stack = stack_roots(prior)
    previous_vectors = [
        p.as_vector() if isinstance(p, InputArray) else np.asarray(p) for p in previous_inputs
    ]
    objective = _collection_objective_factory(
        mu, prior_stack, previous_vectors, config, mdl, n_threads
    )

    if start is None:
        x0 = np.append(np.zeros(config.n_amplitudes), config.initial_v0)
    else:
        x0 = start.as_vector()
    bounds = [(config.current_lower, config.current_upper)] * config.n_amplitudes
    bounds.append((config.v0_lower, config.v0_upper))
    x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])

    f_start = objective(x0)
    x_best, f_best, info = fmin_l_bfgs_b(
        objective,
        x0,
        approx_grad=True,
        bounds=bounds,
        epsilon=config.fd_step,
        pgtol=config.pg_tolerance,
        maxiter=config.max_opt_iterations,
        factr=10.0,
    )
    warning = None
    if info["warnflag"] == 1:
        warning = "iteration limit reached"
    elif info["warnflag"] == 2:
        warning = f"optimizer stopped early: {info.get('task', '')}"
    if f_best > f_start:
        x_best, f_best = x0, f_start
        warning = (warning or "") + "; no descent, keeping start point"

    x_best = np.clip(x_best, [b[0] for b in bounds], [b[1] for b in bounds])
    u = InputArray.from_vector(x_best, config.input_duration)
    plain = f_best - closeness_penalty(x_best, previous_vectors)
    return u, DesignStepInfo(
        objective_start=float(f_start),
        objective_end=float(f_best),
        plain_objective=float(plain),
        n_evaluations=int(info["funcalls"]),
        warning=warning,
    )


def build_segment_profile(amplitudes, config: DesignConfig) -> CurrentProfile:
    """One concatenated-framework segment: n uniform jumps plus a rest."""
    step = config.input_duration / config.n_amplitudes
    profile = CurrentProfile.from_steps(np.asarray(amplitudes, dtype=float), step)
    if config.rest_duration > 0:
        profile = profile.with_rest(config.rest_duration)
    return profile


def concatenate_segments(segments, config: DesignConfig) -> CurrentProfile:
    profile = build_segment_profile(segments[0], config)
    for seg in segments[1:]:
        profile = profile.concat(build_segment_profile(seg, config))
    return profile


def _segment_design_step(mu, frozen_segments, previous_segments, config, model, n_threads):
    """Optimize the next segment's amplitudes on the fully concatenated profile."""

    def objective(x):
        profile = concatenate_segments([*frozen_segments, x], config)
        try:
            bundle = sensitivities(
                mu, profile, v0=config.v0_fixed, nu=config.nu, model=model,
                n_threads=n_threads,
            )
            root_new = information_matrix(bundle).root
        except (SimulationError, ProfileError):
            return SINGULAR_SENTINEL + config.gamma * float(x @ x)
        val = objective_value_root(root_new, x, config.gamma)
        return val + closeness_penalty(x, previous_segments)

    x0 = np.asarray(frozen_segments[-1], dtype=float) if frozen_segments else np.zeros(config.n_amplitudes)
    bounds = [(config.current_lower, config.current_upper)] * config.n_amplitudes

    f_start = objective(x0)
    x_best, f_best, info = fmin_l_bfgs_b(
        objective, x0, approx_grad=True, bounds=bounds,
        epsilon=config.fd_step, pgtol=config.pg_tolerance,
        maxiter=config.max_opt_iterations, factr=10.0,
    )
    warning = None
    if info["warnflag"] == 1:
        warning = "iteration limit reached"
    elif info["warnflag"] == 2:
        warning = f"optimizer stopped early: {info.get('task', '')}"
    if f_best > f_start:
        x_best, f_best = x0, f_start
        warning = (warning or "") + "; no descent, keeping start point"
    x_best = np.clip(x_best, config.current_lower, config.current_upper)
    plain = f_best - closeness_penalty(x_best, previous_segments)
    return x_best, DesignStepInfo(
        objective_start=float(f_start), objective_end=float(f_best),
        plain_objective=float(plain), n_evaluations=int(info["funcalls"]),
        warning=warning,
    )


# ---------------------------------------------------------------------------
# outer loops
# ---------------------------------------------------------------------------

def _estimate_phase(mu_prev, dataset, model, est_config):
    """Returns (mu_next, cost, converged) falling back to mu_prev on failure."""
    try:
        result = estimate(mu_prev, dataset, model=model, config=est_config)
    except Exception:
        return mu_prev, None, False
    if not np.all(np.isfinite(result.mu_hat)):
        return mu_prev, None, False
    return result.mu_hat, result.cost, result.converged


def _beta_phase(truth_mu, dataset, model, est_config):
    if truth_mu is None:
        return None
    try:
        return hessian_conditioning(truth_mu, dataset, model=model, config=est_config).beta
    except Exception:
        return None


def _rel_err(truth_mu, mu):
    if truth_mu is None:
        return None
    return float(np.linalg.norm(mu - truth_mu) / np.linalg.norm(truth_mu))


def run_collection_design(
    mu0: np.ndarray,
    config: DesignConfig,
    data_source,
    *,
    model: CellModel | None = None,
    est_config: EstimationConfig | None = None,
    n_threads: int = 1,
    verbose: bool = False,
) -> DesignRecord:
    """Collection-of-inputs design: fixed alternating first input, then up to
    `max_inputs` designed inputs, stopping early when a new current is within
    epsilon of an existing one."""
    if config.framework != "collection":
        raise ConfigError("run_collection_design requires a collection config")
    mdl = model or default_model()
    ecfg = est_config or EstimationConfig()
    truth = getattr(data_source, "truth_mu", None)

    record = DesignRecord(framework="collection", mu_initial=np.asarray(mu0, dtype=float))
    mu = np.asarray(mu0, dtype=float)
    inputs: list[InputArray] = []
    matrices: list[np.ndarray] = []
    blocks = []

    for n in range(1, config.max_inputs + 1):
        warning = None
        if n == 1:
            u = first_collection_input(config)
            bundle = sensitivities(mu, u, nu=config.nu, model=mdl, n_threads=n_threads)
            info = information_matrix(bundle)
            m_new = info
            phi = objective_value_root(info.root, u.as_vector(), config.gamma)
            phi_hat = phi
        else:
            prior = matrices
            u, step_info = design_step(
                mu, prior, inputs, config, model=mdl, start=inputs[-1],
                n_threads=n_threads,
            )
            warning = step_info.warning
            if stopping_criterion(u, inputs, config.epsilon):
                record.stopped_early = True
                record.stop_reason = (
                    f"designed input within epsilon={config.epsilon} of an existing one"
                )
                break
            bundle = sensitivities(mu, u, nu=config.nu, model=mdl, n_threads=n_threads)
            m_new = information_matrix(bundle)
            phi = step_info.plain_objective
            phi_hat = step_info.objective_end

        block = data_source.acquire(
            u.profile(), u.v0, f"input_{n}",
        )
        blocks.append(block)
        dataset = DataSet(tuple(blocks), provenance=getattr(data_source, "provenance", "virtual"),
                          truth_mu=None if truth is None else np.asarray(truth))

        mu_next, j_value, converged = _estimate_phase(mu, dataset, mdl, ecfg)
        beta = _beta_phase(truth, dataset, mdl, ecfg)

        inputs.append(u)
        matrices.append(m_new)
        mu = mu_next
        record.iterations.append(
            DesignIteration(
                n=n, input=u, segment=None, profile=u.profile(), v0=u.v0,
                info_matrix=m_new.matrix, mu=mu.copy(), phi=float(phi),
                phi_hat=float(phi_hat), cost=j_value, rel_err=_rel_err(truth, mu),
                beta=beta, estimation_converged=converged, design_warning=warning,
            )
        )
        if verbose:
            rel = record.iterations[-1].rel_err
            print(
                f"[collection n={n}] phi_hat={phi_hat:.4f} J={j_value} "
                f"rel_err={rel} beta={beta}"
            )
    return record


def run_concatenated_design(
    config: DesignConfig,
    data_source,
    *,
    mu0: np.ndarray | None = None,
    model: CellModel | None = None,
    est_config: EstimationConfig | None = None,
    n_threads: int = 1,
    verbose: bool = False,
) -> DesignRecord:
    """Concatenated-segments design: each iteration appends one optimized
    segment (six jumps plus a rest) to the frozen profile; the initial
    voltage is fixed globally and the first segment is itself designed."""
    if config.framework != "concatenated":
        raise ConfigError("run_concatenated_design requires a concatenated config")
    mdl = model or default_model()
    ecfg = est_config or EstimationConfig()
    truth = getattr(data_source, "truth_mu", None)
    mu = np.asarray(mu0, dtype=float) if mu0 is not None else mu_midpoint()

    record = DesignRecord(framework="concatenated", mu_initial=mu.copy())
    segments: list[np.ndarray] = []

    for n in range(1, config.max_inputs + 1):
        x_seg, step_info = _segment_design_step(
            mu, segments, segments, config, mdl, n_threads
        )
        segments.append(x_seg)
        profile = concatenate_segments(segments, config)

        bundle = sensitivities(
            mu, profile, v0=config.v0_fixed, nu=config.nu, model=mdl, n_threads=n_threads
        )
        m_full = information_matrix(bundle).matrix

        block = data_source.acquire(profile, config.v0_fixed, f"segment_{n}")
        dataset = DataSet((block,), provenance=getattr(data_source, "provenance", "virtual"),
                          truth_mu=None if truth is None else np.asarray(truth))

        mu_next, j_value, converged = _estimate_phase(mu, dataset, mdl, ecfg)
        beta = _beta_phase(truth, dataset, mdl, ecfg)
        mu = mu_next

        record.iterations.append(
            DesignIteration(
                n=n, input=None, segment=x_seg, profile=profile, v0=config.v0_fixed,
                info_matrix=m_full, mu=mu.copy(), phi=step_info.plain_objective,
                phi_hat=step_info.objective_end, cost=j_value,
                rel_err=_rel_err(truth, mu), beta=beta,
                estimation_converged=converged, design_warning=step_info.warning,
            )
        )
        if verbose:
            rel = record.iterations[-1].rel_err
            print(
                f"[concatenated n={n}] phi_hat={step_info.objective_end:.4f} "
                f"J={j_value} rel_err={rel} beta={beta}"
            )
    return record
