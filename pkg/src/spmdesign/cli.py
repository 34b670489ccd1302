"""Command-line interface.

Subcommands: simulate, design, estimate, study, run-test, report.
Exit codes: 0 success, 1 runtime failure (JSON error record on stderr),
2 usage errors (argparse).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import plots
from .config import (
    PackageConfig,
    collection_design_config,
    concatenated_design_config,
    load_config,
)
from .data_io import VirtualDataSource, generate_virtual_data, ingest_measurements
from .design import DesignRecord, run_collection_design, run_concatenated_design
from .errors import SpmError
from .estimation import estimate, restart_study
from .experiments import ExperimentConfig, run_test, synthesize_measurements
from .parameters import (
    MU_NAMES,
    mu_midpoint,
    truth_mu,
)
from .profiles import InputArray, write_profile_csv
from .simulate import CellModel, simulate


def _load_package_config(path: str | None) -> PackageConfig:
    if path is None:
        return PackageConfig()
    return load_config(path)


def _model(cfg: PackageConfig) -> CellModel:
    return CellModel(cfg.cell, cfg.model)


def _read_mu(path: str | None, fallback: np.ndarray) -> np.ndarray:
    if path is None:
        return fallback
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "mu" in doc:
        return np.asarray(doc["mu"], dtype=float)
    if isinstance(doc, list):
        return np.asarray(doc, dtype=float)
    raise SpmError(f"parameter file {path} must hold a list or an object with 'mu'")


def _read_input(path: str) -> InputArray:
    with open(path) as fh:
        doc = json.load(fh)
    return InputArray.from_dict(doc)


def _cmd_simulate(args) -> int:
    cfg = _load_package_config(args.config)
    mu = _read_mu(args.params, truth_mu())
    u = _read_input(args.input)
    trace = simulate(mu, u, model=_model(cfg))
    trace.to_csv(args.out)
    if args.figures:
        plots.save_figure(plots.plot_voltage_trace(trace), Path(args.out).with_suffix(".png"))
    print(f"wrote {args.out} ({trace.times.size} samples)")
    return 0


def _cmd_design(args) -> int:
    cfg = _load_package_config(args.config)
    if args.framework == "collection":
        design_cfg = cfg.design if cfg.design.framework == "collection" else collection_design_config()
    else:
        design_cfg = cfg.design if cfg.design.framework == "concatenated" else concatenated_design_config()

    model = _model(cfg)
    truth = _read_mu(args.truth, truth_mu())
    source = VirtualDataSource(truth, model, noise_sigma=args.noise, seed=args.seed)
    mu0 = _read_mu(args.start, mu_midpoint())

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if args.framework == "collection":
        record = run_collection_design(
            mu0, design_cfg, source, model=model, est_config=cfg.estimation,
            verbose=not args.quiet,
        )
    else:
        record = run_concatenated_design(
            design_cfg, source, mu0=mu0, model=model, est_config=cfg.estimation,
            verbose=not args.quiet,
        )
    wall = time.perf_counter() - t0
    record.seed = args.seed

    record.to_json(out / "design_record.json")
    record.summary_csv(out / "design_summary.csv")
    for it in record.iterations:
        write_profile_csv(out / f"input_{it.n}.csv", it.profile)
    with open(out / "timings.json", "w") as fh:
        json.dump({"design_wall_s": wall}, fh, indent=1)
        fh.write("\n")
    if args.figures:
        plots.save_figure(plots.plot_inputs(record), out / "inputs.png")
        plots.save_figure(plots.plot_iteration_metrics(record), out / "iteration_metrics.png")
    final = record.iterations[-1]
    print(
        f"{args.framework} design finished: {len(record.iterations)} inputs, "
        f"rel_err={final.rel_err}, wall={wall:.1f}s"
    )
    return 0


def _cmd_estimate(args) -> int:
    cfg = _load_package_config(args.config)
    model = _model(cfg)
    record = DesignRecord.from_json(args.record) if args.record else None
    inputs = record.inputs() if record else None
    dataset = ingest_measurements(args.data, args.mode, dt=cfg.model.dt, inputs=inputs)
    mu0 = _read_mu(args.start, mu_midpoint())
    result = estimate(mu0, dataset, model=model, config=cfg.estimation)
    doc = {
        "converged": result.converged,
        "cost": result.cost,
        "message": result.message,
        "n_evaluations": result.n_evaluations,
        "mu_hat": dict(zip(MU_NAMES, (float(x) for x in result.mu_hat))),
    }
    print(json.dumps(doc, indent=1))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    return 0


def _cmd_study(args) -> int:
    cfg = _load_package_config(args.config)
    model = _model(cfg)
    record = DesignRecord.from_json(args.record) if args.record else None
    inputs = record.inputs() if record else None
    dataset = ingest_measurements(args.data, args.mode, dt=cfg.model.dt, inputs=inputs)
    truth = _read_mu(args.truth, None) if args.truth else None
    study = restart_study(
        dataset, n_runs=args.runs, seed=args.seed, model=model,
        config=cfg.study, truth_mu=truth, n_jobs=args.jobs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    study.to_csv(out / "study.csv")
    hists = study.histograms()
    for j, h in enumerate(hists, start=1):
        with open(out / f"hist_mu{j}.json", "w") as fh:
            json.dump(h, fh, indent=1)
            fh.write("\n")
    if args.figures:
        plots.save_figure(plots.plot_study_bars(hists), out / "study_bars.png")
    n_conv = sum(r.converged for r in study.runs)
    print(f"study finished: {n_conv}/{len(study.runs)} converged runs, wrote {out}")
    return 0


def _cmd_run_test(args) -> int:
    cfg = _load_package_config(args.config)
    model = _model(cfg)
    truth = _read_mu(args.truth, truth_mu()) if (args.truth or args.synthesize) else None

    data_path = args.data
    if args.synthesize:
        record = DesignRecord.from_json(args.record)
        fix_dir = Path(args.out) / "fixture"
        synthesize_measurements(
            record, truth, fix_dir, model=model, noise_sigma=args.noise, seed=args.seed
        )
        data_path = str(fix_dir)
    if data_path is None:
        raise SpmError("run-test needs --data (or --synthesize with a truth parameter)")

    exp = ExperimentConfig(
        test=args.test,
        record_path=args.record,
        data_path=data_path,
        output_dir=args.out,
        n_runs=args.runs,
        seed=args.seed,
        n_jobs=args.jobs,
        truth=truth,
        figures=args.figures,
    )
    summary = run_test(exp, model=model, est_config=cfg.estimation)
    print(json.dumps(summary, indent=1))
    return 0


def _cmd_report(args) -> int:
    record = DesignRecord.from_json(args.record)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record.summary_csv(out / "design_summary.csv")
    for it in record.iterations:
        write_profile_csv(out / f"input_{it.n}.csv", it.profile)
    plots.save_figure(plots.plot_inputs(record), out / "inputs.png")
    plots.save_figure(plots.plot_iteration_metrics(record), out / "iteration_metrics.png")
    print(f"rendered report for {len(record.iterations)} iterations into {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spmdesign",
        description="Optimal input design and parameter estimation for a "
        "single-particle cell model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one input and write a voltage CSV")
    p.add_argument("--params", help="JSON file with scaled parameters (default: synthetic truth)")
    p.add_argument("--input", required=True, help="JSON file with amplitudes/v0/t_f")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--figures", action="store_true", help="also render a PNG")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("design", help="run an input-design loop on virtual data")
    p.add_argument("--framework", choices=["collection", "concat"], required=True)
    p.add_argument("--config", help="INI config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--truth", help="JSON file with the hidden parameter (default: synthetic truth)")
    p.add_argument("--start", help="JSON file with the initial parameter (default: box midpoint)")
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--noise", type=float, default=0.0, help="virtual measurement noise sigma")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=_cmd_design, figures=True)

    p = sub.add_parser("estimate", help="estimate parameters from measurement files")
    p.add_argument("--data", required=True, help="measurement CSV file or directory")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--mode", choices=["cut", "full"], default="full")
    p.add_argument("--record", help="design record JSON (required for cut mode)")
    p.add_argument("--start", help="JSON file with the initial parameter")
    p.add_argument("--out", help="write the result JSON here as well")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("study", help="randomized-restart estimation study")
    p.add_argument("--data", required=True, help="measurement CSV file or directory")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--mode", choices=["cut", "full"], default="full")
    p.add_argument("--record", help="design record JSON (required for cut mode)")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--jobs", type=int, default=2)
    p.add_argument("--truth", help="JSON truth parameter for error reporting")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=_cmd_study, figures=True)

    p = sub.add_parser("run-test", help="run one of the four test pipelines")
    p.add_argument("--test", type=int, choices=[1, 2, 3, 4], required=True)
    p.add_argument("--config", help="INI config file")
    p.add_argument("--record", required=True, help="design record JSON")
    p.add_argument("--data", help="measurement CSV file or directory")
    p.add_argument("--synthesize", action="store_true",
                   help="synthesize the measurement fixture from the truth parameter")
    p.add_argument("--truth", help="JSON truth parameter")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--jobs", type=int, default=2)
    p.add_argument("--out", required=True, help="report bundle directory")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=_cmd_run_test, figures=True)

    p = sub.add_parser("report", help="re-render figures and CSVs from a design record")
    p.add_argument("--record", required=True, help="design record JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpmError as exc:
        json.dump(
            {"error": type(exc).__name__, "message": str(exc)},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
