"""Test pipelines on (synthetic or lab) measurement files and report bundles.

The four tests cross the two design frameworks with the two data modes:

    Test 1  collection    cut   (impulse samples only)
    Test 2  collection    full  (impulse + rest + preparation samples)
    Test 3  concatenated  cut
    Test 4  concatenated  full

A pipeline takes a finished design record plus measurement files, runs the
randomized-restart study, proposes an optimal parameter as the centroid of
the largest cluster of optimizers, and writes a report bundle:

    summary.json, study.csv, hist_mu1..9.json, error_trace_[n].csv,
    design_record.json, timings.json, *.png figures

Everything except timings.json is byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import EstimationConfig, StudyConfig
from .data_io import ingest_measurements, write_measurement_csv
from .design import DesignRecord
from .errors import ConfigError, DataError
from .estimation import DataBlock, DataSet, StudyResult, restart_study
from .parameters import MU_NAMES
from .profiles import CurrentProfile
from .simulate import CellModel, default_model, simulate
from . import plots

TEST_MATRIX = {
    1: ("collection", "cut"),
    2: ("collection", "full"),
    3: ("concatenated", "cut"),
    4: ("concatenated", "full"),
}

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """One run-test invocation."""

    test: int
    record_path: str
    data_path: str
    output_dir: str
    n_runs: int = 100
    seed: int = 12345
    n_jobs: int = 2
    truth: np.ndarray | None = None     # enables error reporting on synthetic data
    figures: bool = True

    def __post_init__(self):
        if self.test not in TEST_MATRIX:
            raise ConfigError(f"test selector must be 1..4, got {self.test}")


def propose_mu_opt(study: StudyResult, decimals: int = 3):
    """Most common optimizer: round converged optimizers to `decimals`,
    take the centroid of the largest cluster."""
    runs = [r for r in study.runs if r.converged]
    if not runs:
        runs = list(study.runs)
    clusters: dict[tuple, list] = {}
    for r in runs:
        key = tuple(np.round(r.mu_hat, decimals))
        clusters.setdefault(key, []).append(r.mu_hat)
    best_key = max(sorted(clusters), key=lambda k: len(clusters[k]))
    members = clusters[best_key]
    return np.mean(members, axis=0), len(members)


def error_traces(mu_opt, dataset: DataSet, model: CellModel):
    """Per-block relative data-model discrepancy (w - v)/w on the data grid."""
    out = {}
    for block in dataset.blocks:
        trace = simulate(mu_opt, block.profile, v0=block.v0, model=model)
        v = np.interp(block.times, trace.times, trace.voltages)
        out[block.input_id] = (block.times, (block.voltages - v) / block.voltages)
    return out


def experiment_time(test: int, record: DesignRecord, dataset: DataSet) -> float:
    """Table-style experiment duration: designed input time for cut tests,
    recorded file spans for full tests."""
    mode = TEST_MATRIX[test][1]
    if mode == "cut":
        if record.framework == "collection":
            return float(sum(it.input.t_f for it in record.iterations))
        return float(record.iterations[-1].profile.duration)
    return float(sum(b.times[-1] - b.times[0] for b in dataset.blocks))


def run_test(
    config: ExperimentConfig,
    *,
    model: CellModel | None = None,
    study_config: StudyConfig | None = None,
    est_config: EstimationConfig | None = None,
) -> dict:
    """Execute one test pipeline and write its report bundle.

    Returns the summary dictionary (also written to summary.json).
    """
    framework, mode = TEST_MATRIX[config.test]
    record = DesignRecord.from_json(config.record_path)
    if record.framework != framework:
        raise ConfigError(
            f"test {config.test} needs a {framework} design record, "
            f"got {record.framework!r}"
        )
    mdl = model or default_model()
    scfg = study_config or StudyConfig(n_runs=config.n_runs, seed=config.seed,
                                       n_jobs=config.n_jobs)

    inputs = record.inputs() if mode == "cut" else None
    dataset = ingest_measurements(
        config.data_path, mode, dt=mdl.config.dt, inputs=inputs
    )
    truth = None if config.truth is None else np.asarray(config.truth, dtype=float)

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    study = restart_study(
        dataset, n_runs=config.n_runs, seed=config.seed, model=mdl,
        config=scfg, est_config=est_config, truth_mu=truth, n_jobs=config.n_jobs,
    )
    study_wall = time.perf_counter() - t0

    mu_opt, cluster_size = propose_mu_opt(study, scfg.cluster_decimals)
    traces = error_traces(mu_opt, dataset, mdl)

    # --- bundle files -----------------------------------------------------
    study.to_csv(out / "study.csv")
    hists = study.histograms()
    for j, h in enumerate(hists, start=1):
        with open(out / f"hist_mu{j}.json", "w") as fh:
            json.dump({"schema_version": SCHEMA_VERSION, **h}, fh, indent=1)
            fh.write("\n")
    for n, (input_id, (t, e)) in enumerate(sorted(traces.items()), start=1):
        with open(out / f"error_trace_{n}.csv", "w", newline="") as fh:
            fh.write(f"# input {input_id}\n")
            fh.write("time_s,rel_err\n")
            for ti, ei in zip(t, e):
                fh.write(f"{ti:.10g},{ei:.12g}\n")
    shutil.copyfile(config.record_path, out / "design_record.json")

    summary = {
        "schema_version": SCHEMA_VERSION,
        "test": config.test,
        "framework": framework,
        "mode": mode,
        "experiment_time_s": experiment_time(config.test, record, dataset),
        "data_points": int(dataset.n_samples),
        "n_runs": config.n_runs,
        "seed": config.seed,
        "mu_opt": [float(x) for x in mu_opt],
        "mu_opt_cluster_size": int(cluster_size),
        "converged_runs": int(sum(r.converged for r in study.runs)),
        "max_abs_error_trace": float(
            max(np.max(np.abs(e)) for _t, e in traces.values())
        ),
    }
    if truth is not None:
        summary["mu_opt_rel_err"] = float(
            np.linalg.norm(mu_opt - truth) / np.linalg.norm(truth)
        )
        summary["success_fraction"] = study.success_fraction()
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")

    timings = {
        "study_wall_s": study_wall,
        "mean_optimization_s": float(np.mean([r.wall_time for r in study.runs])),
        "total_optimization_s": float(np.sum([r.wall_time for r in study.runs])),
    }
    with open(out / "timings.json", "w") as fh:
        json.dump(timings, fh, indent=1)
        fh.write("\n")

    if config.figures:
        plots.save_figure(plots.plot_study_bars(hists, title=f"Test {config.test}"),
                          out / "study_bars.png")
        plots.save_figure(plots.plot_inputs(record), out / "inputs.png")
        plots.save_figure(plots.plot_iteration_metrics(record), out / "iteration_metrics.png")
        plots.save_figure(plots.plot_error_traces(traces), out / "error_traces.png")
    return summary


# ---------------------------------------------------------------------------
# synthetic measurement fixtures
# ---------------------------------------------------------------------------

def _phase_grid(start, duration, n_samples, include_end=False):
    if include_end:
        return start + np.linspace(0.0, duration, n_samples)
    return start + duration * np.arange(n_samples) / n_samples


def synthesize_measurements(
    record: DesignRecord,
    truth_mu,
    out_dir,
    *,
    model: CellModel | None = None,
    prep_duration: float = 30.0,
    rest_duration: float = 120.0,
    prep_samples: int = 30,
    impulse_samples: int | None = None,
    rest_samples: int = 120,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> list[Path]:
    """Write lab-format measurement CSVs for a finished design.

    Each collection input becomes one file `block_nn.csv` holding a
    zero-current preparation hold at the input's initial voltage, the
    designed impulse window, and a zero-current rest.  The concatenated
    framework produces a single file with its internal rests labeled as
    rest phases.  Voltages are the simulated truth response, interpolated
    onto the file grid, with optional gaussian noise.
    """
    mdl = model or default_model()
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dt = mdl.config.dt

    paths = []
    for n, item in enumerate(record.final_acquisition(), start=1):
        if record.framework == "collection":
            profile, v0 = item.profile(), item.v0
        else:
            profile, v0 = item
        full = CurrentProfile.zero(prep_duration).concat(profile).with_rest(rest_duration)
        trace = simulate(truth_mu, full, v0=v0, model=mdl)

        n_imp = impulse_samples
        if n_imp is None:
            n_imp = int(round(profile.duration / dt)) + 1
        t_prep = _phase_grid(0.0, prep_duration, prep_samples)
        t_imp = _phase_grid(prep_duration, profile.duration, n_imp)
        t_rest = _phase_grid(
            prep_duration + profile.duration, rest_duration, rest_samples, include_end=True
        )[1:]
        times = np.concatenate([t_prep, t_imp, t_rest])
        phases = np.concatenate(
            [
                np.full(t_prep.size, "prep", dtype="U8"),
                _impulse_phase_labels(profile, t_imp - prep_duration),
                np.full(t_rest.size, "rest", dtype="U8"),
            ]
        )
        w = np.interp(times, trace.times, trace.voltages)
        if noise_sigma > 0:
            w = w + rng.normal(0.0, noise_sigma, size=w.shape)
        block = DataBlock(
            input_id=f"block_{n:02d}", times=times, voltages=w,
            profile=full, v0=v0, phases=phases,
        )
        path = out / f"block_{n:02d}.csv"
        write_measurement_csv(path, block)
        paths.append(path)
    return paths


def _impulse_phase_labels(profile: CurrentProfile, t_rel: np.ndarray) -> np.ndarray:
    """Inside a designed profile, zero-amplitude spans are rest phases."""
    amps = profile.value_at(np.minimum(t_rel, profile.duration))
    return np.where(amps == 0.0, "rest", "impulse").astype("U8")
