"""Configuration dataclasses and the key-value (INI) config file format.

Every numeric default used anywhere in the package can be overridden from
a config file; see `default_config_text()` for a template with all keys.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .parameters import CellParameters, ElectrodeConstants, default_cell


@dataclass(frozen=True)
class ModelConfig:
    """Discretization and guard settings of the forward simulator."""

    n_shells: int = 50          # radial finite-volume shells per particle
    dt: float = 0.1             # internal time step (s)
    clamp_budget_fraction: float = 0.05  # tolerated fraction of clamped outputs
    scan_points: int = 512      # OCV pre-scan grid for the v0 root bracket
    root_tolerance: float = 1e-10  # |voltage residual| for the v0 bisection (V)

    def __post_init__(self):
        if self.n_shells < 2 or self.dt <= 0:
            raise ConfigError("n_shells must be >= 2 and dt positive")


@dataclass(frozen=True)
class EstimationConfig:
    """Bound-constrained least-squares settings."""

    diff_step: float = 1e-6     # forward FD step for the Jacobian
    ftol: float = 1e-12         # cost-decrease termination
    xtol: float = 1e-10         # step-size termination
    max_iterations: int = 300
    n_threads: int = 2          # per-input residual blocks evaluated in parallel
    failure_residual: float = 1e6  # residual fill-in when a trial simulation fails


@dataclass(frozen=True)
class DesignConfig:
    """Settings of one input-design framework."""

    framework: str = "collection"       # "collection" | "concatenated"
    n_amplitudes: int = 24              # design amplitudes per input/segment
    input_duration: float = 60.0        # active seconds per input/segment
    rest_duration: float = 0.0          # rest appended to each segment (s)
    max_inputs: int = 10                # inputs (collection) / segments (concatenated)
    epsilon: float = 0.1                # L2 stopping tolerance on currents
    gamma: float = 1e-4                 # input-norm regularization weight
    nu: float = 1e-3                    # parameter FD step for sensitivities
    current_lower: float = -8.8         # A
    current_upper: float = 8.8          # A
    v0_lower: float = 3.3               # V
    v0_upper: float = 4.1               # V
    v0_fixed: float = 3.9               # concatenated framework initial voltage (V)
    initial_v0: float = 3.7             # collection framework first-input voltage (V)
    fd_step: float = 1e-4               # FD gradient step on the design variables
    pg_tolerance: float = 1e-6          # projected-gradient stopping tolerance
    max_opt_iterations: int = 200       # quasi-Newton iteration cap

    def __post_init__(self):
        if self.framework not in ("collection", "concatenated"):
            raise ConfigError(f"unknown framework {self.framework!r}")
        if self.max_inputs < 1 or self.n_amplitudes < 1:
            raise ConfigError("max_inputs and n_amplitudes must be >= 1")
        if self.input_duration <= 0 or self.rest_duration < 0:
            raise ConfigError("durations must be positive")
        if self.current_lower >= self.current_upper or self.v0_lower >= self.v0_upper:
            raise ConfigError("bounds must be ordered")

    @property
    def segment_duration(self) -> float:
        return self.input_duration + self.rest_duration


def collection_design_config(**overrides) -> DesignConfig:
    """Collection framework defaults: 10 inputs of 24 jumps over 60 s."""
    base = dict(
        framework="collection", n_amplitudes=24, input_duration=60.0,
        rest_duration=0.0, max_inputs=10,
    )
    base.update(overrides)
    return DesignConfig(**base)


def concatenated_design_config(**overrides) -> DesignConfig:
    """Concatenated framework defaults: 9 segments of six 20 s jumps + 600 s rest."""
    base = dict(
        framework="concatenated", n_amplitudes=6, input_duration=120.0,
        rest_duration=600.0, max_inputs=9,
    )
    base.update(overrides)
    return DesignConfig(**base)


@dataclass(frozen=True)
class StudyConfig:
    """Randomized-restart study settings."""

    n_runs: int = 100
    seed: int = 12345
    n_jobs: int = 2             # process-level parallel estimation runs
    hist_bins: int = 25         # per-parameter histogram bins over the box
    cluster_decimals: int = 3   # rounding used to cluster optimizers
    success_rel_err: float = 1e-2  # study success threshold on ||mu-mu*||/||mu*||


_SECTION_CLASSES = {
    "model": ModelConfig,
    "design": DesignConfig,
    "estimation": EstimationConfig,
    "study": StudyConfig,
}

_ELECTRODE_KEYS = (
    "radius", "rho_cm", "rho_r_third", "active_mass", "diffusion",
    "log_rate", "rk_coeffs", "ocv_offset",
)


def _coerce(value: str, target):
    if isinstance(target, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    return value


def _dataclass_from_section(cls, section) -> object:
    base = cls()
    kwargs = {}
    known = {f.name: getattr(base, f.name) for f in fields(cls)}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{section.name}]")
        kwargs[key] = _coerce(raw, known[key])
    return replace(base, **kwargs)


def _electrode_from_section(base: ElectrodeConstants, section) -> ElectrodeConstants:
    kwargs = {}
    for key, raw in section.items():
        if key not in _ELECTRODE_KEYS:
            raise ConfigError(f"unknown electrode key {key!r}")
        if key == "rk_coeffs":
            kwargs[key] = tuple(float(v) for v in raw.split(","))
        else:
            kwargs[key] = float(raw)
    return replace(base, **kwargs)


@dataclass(frozen=True)
class PackageConfig:
    """Everything a run needs: cell template plus per-module settings."""

    cell: CellParameters = field(default_factory=default_cell)
    model: ModelConfig = field(default_factory=ModelConfig)
    design: DesignConfig = field(default_factory=collection_design_config)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    study: StudyConfig = field(default_factory=StudyConfig)


def load_config(path) -> PackageConfig:
    """Read a config file; missing sections/keys keep their defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path} not found or unreadable")

    cell = default_cell()
    if parser.has_section("cathode"):
        cell = replace(cell, cathode=_electrode_from_section(cell.cathode, parser["cathode"]))
    if parser.has_section("anode"):
        cell = replace(cell, anode=_electrode_from_section(cell.anode, parser["anode"]))
    if parser.has_section("cell"):
        kwargs = {}
        for key, raw in parser["cell"].items():
            if key not in ("inner_resistance", "anode_initial_soc", "temperature"):
                raise ConfigError(f"unknown cell key {key!r}")
            kwargs[key] = float(raw)
        cell = replace(cell, **kwargs)

    sections = {}
    for name, cls in _SECTION_CLASSES.items():
        if parser.has_section(name):
            if name == "design" and "framework" in parser[name]:
                maker = (
                    concatenated_design_config
                    if parser[name]["framework"] == "concatenated"
                    else collection_design_config
                )
                base = maker()
                kwargs = {}
                known = {f.name: getattr(base, f.name) for f in fields(DesignConfig)}
                for key, raw in parser[name].items():
                    if key not in known:
                        raise ConfigError(f"unknown key {key!r} in [design]")
                    kwargs[key] = _coerce(raw, known[key])
                sections[name] = replace(base, **kwargs)
            else:
                sections[name] = _dataclass_from_section(cls, parser[name])
    return PackageConfig(cell=cell, **sections)


def default_config_text() -> str:
    """An INI template listing every overridable key with its default."""
    cfg = PackageConfig()
    lines = ["# spmdesign configuration (all keys optional)"]
    for name, obj in (
        ("model", cfg.model), ("design", cfg.design),
        ("estimation", cfg.estimation), ("study", cfg.study),
    ):
        lines.append(f"\n[{name}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {getattr(obj, f.name)}")
    for name, el in (("cathode", cfg.cell.cathode), ("anode", cfg.cell.anode)):
        lines.append(f"\n[{name}]")
        for key in _ELECTRODE_KEYS:
            val = getattr(el, key)
            if key == "rk_coeffs":
                val = ", ".join(str(v) for v in val)
            lines.append(f"{key} = {val}")
    lines.append("\n[cell]")
    lines.append(f"inner_resistance = {cfg.cell.inner_resistance}")
    lines.append(f"anode_initial_soc = {cfg.cell.anode_initial_soc}")
    lines.append(f"temperature = {cfg.cell.temperature}")
    return "\n".join(lines) + "\n"
