"""Measurement-file ingestion, virtual data generation and fixtures.

Measurement CSV format (one file per recorded input):

    # spmdesign measurement v1
    time_s,current_A,voltage_V,phase

with phase in {"prep", "impulse", "rest"} and strictly increasing time.
A directory of such files is one dataset; files are read in sorted order.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import DataError
from .estimation import PHASES, DataBlock, DataSet
from .profiles import CurrentProfile, InputArray
from .simulate import CellModel, default_model, simulate

MEASUREMENT_HEADER = ["time_s", "current_A", "voltage_V", "phase"]
FILE_COMMENT = "# spmdesign measurement v1"


class VirtualDataSource:
    """Acquires data by simulating a hidden truth parameter.

    Optional i.i.d. gaussian voltage noise; with sigma == 0 (default) the
    output is the bit-exact noiseless simulation.
    """

    def __init__(self, truth_mu, model: CellModel | None = None,
                 noise_sigma: float = 0.0, seed: int = 0):
        self.truth_mu = np.asarray(truth_mu, dtype=float)
        self.model = model or default_model()
        self.noise_sigma = float(noise_sigma)
        self._rng = np.random.default_rng(seed)

    @property
    def provenance(self) -> str:
        return "virtual"

    def acquire(self, profile: CurrentProfile, v0: float, input_id: str,
                phases: np.ndarray | None = None) -> DataBlock:
        trace = simulate(self.truth_mu, profile, v0=v0, model=self.model)
        w = trace.voltages
        if self.noise_sigma > 0.0:
            w = w + self._rng.normal(0.0, self.noise_sigma, size=w.shape)
        return DataBlock(
            input_id=input_id, times=trace.times, voltages=w,
            profile=profile, v0=v0, phases=phases,
        )


class ReplayDataSource:
    """Serves pre-recorded blocks by acquisition order (lab replay)."""

    def __init__(self, dataset: DataSet):
        self._blocks = list(dataset.blocks)
        self._cursor = 0
        self.truth_mu = dataset.truth_mu
        self.provenance = dataset.provenance

    def acquire(self, profile, v0, input_id, phases=None) -> DataBlock:
        if self._cursor >= len(self._blocks):
            raise DataError("replay source exhausted: no block for " + input_id)
        block = self._blocks[self._cursor]
        self._cursor += 1
        return block


def phases_for_profile(profile: CurrentProfile, dt: float) -> np.ndarray:
    """Node phase labels: zero-amplitude intervals are 'rest', others 'impulse'."""
    amps = profile.node_values(dt)
    return np.where(amps == 0.0, "rest", "impulse").astype("U8")


def generate_virtual_data(
    truth_mu,
    inputs,
    *,
    model: CellModel | None = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> DataSet:
    """Noiseless (or optionally noisy) data w = v(truth) for each input.

    `inputs` is a sequence of InputArray or (CurrentProfile, v0) pairs.
    """
    mdl = model or default_model()
    source = VirtualDataSource(truth_mu, mdl, noise_sigma, seed)
    blocks = []
    for n, item in enumerate(inputs, start=1):
        if isinstance(item, InputArray):
            profile, v0 = item.profile(), item.v0
        else:
            profile, v0 = item
        phases = phases_for_profile(profile, mdl.config.dt)
        blocks.append(source.acquire(profile, v0, f"input_{n}", phases))
    return DataSet(tuple(blocks), provenance="virtual",
                   truth_mu=np.asarray(truth_mu, dtype=float))


# ---------------------------------------------------------------------------
# measurement CSV files
# ---------------------------------------------------------------------------

def write_measurement_csv(path, block: DataBlock) -> None:
    """One block to one CSV file, with the applied current sampled on the
    block grid (step left-endpoint convention)."""
    currents = block.profile.value_at(np.minimum(block.times, block.profile.duration))
    phases = block.phases
    if phases is None:
        phases = np.full(block.times.shape, "impulse", dtype="U8")
    with open(path, "w", newline="") as fh:
        fh.write(FILE_COMMENT + "\n")
        writer = csv.writer(fh)
        writer.writerow(MEASUREMENT_HEADER)
        for t, i, v, p in zip(block.times, currents, block.voltages, phases):
            writer.writerow([f"{t:.10g}", f"{i:.12g}", f"{v:.12g}", p])


def _parse_measurement_file(path: Path):
    times, currents, voltages, phases = [], [], [], []
    with open(path, newline="") as fh:
        lineno = 0
        reader = csv.reader(fh)
        header_seen = False
        for row in reader:
            lineno += 1
            if not row or row[0].startswith("#"):
                continue
            if not header_seen:
                if row != MEASUREMENT_HEADER:
                    raise DataError(f"{path}:{lineno}: unexpected header {row!r}")
                header_seen = True
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                times.append(float(row[0]))
                currents.append(float(row[1]))
                voltages.append(float(row[2]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparseable number: {exc}") from exc
            phase = row[3].strip()
            if phase not in PHASES:
                raise DataError(f"{path}:{lineno}: unknown phase {phase!r}")
            phases.append(phase)
    if not times:
        raise DataError(f"{path}: no data rows")
    t = np.asarray(times)
    if np.any(np.diff(t) <= 0):
        k = int(np.flatnonzero(np.diff(t) <= 0)[0])
        raise DataError(f"{path}: non-monotone time at row {k + 2}")
    return t, np.asarray(currents), np.asarray(voltages), np.asarray(phases, dtype="U8")


def _profile_from_samples(times, currents, dt: float) -> CurrentProfile:
    """Reconstruct the applied step current on the internal dt grid.

    Sample k holds on [t_k, t_{k+1}); the grid is snapped to multiples of
    dt (fixtures are generated dt-aligned, so this is lossless for them).
    """
    end = round(times[-1] / dt) * dt
    if end <= 0:
        end = dt
    n = round(end / dt)
    lefts = np.arange(n) * dt
    idx = np.clip(np.searchsorted(times, lefts + dt * 0.5, side="right") - 1, 0, times.size - 1)
    amps = np.asarray(currents)[idx]
    # merge equal consecutive amplitudes into single steps
    keep = np.flatnonzero(np.concatenate(([True], np.diff(amps) != 0)))
    bps = np.concatenate((lefts[keep], [end]))
    return CurrentProfile(bps, amps[keep])


def ingest_measurements(
    path,
    mode: str = "cut",
    *,
    dt: float = 0.1,
    inputs: list[InputArray] | None = None,
) -> DataSet:
    """Read one measurement file or a directory of them.

    mode="cut" keeps impulse-phase samples only and requires the designed
    `inputs` (the model then runs on the designed profile from its own
    initial voltage, matching the virtual-design setting).  mode="full"
    keeps every sample; the applied current is reconstructed from the file
    and the initial voltage is the first recorded sample.
    """
    if mode not in ("cut", "full"):
        raise DataError(f"unknown ingestion mode {mode!r}")
    p = Path(path)
    files = sorted(p.glob("*.csv")) if p.is_dir() else [p]
    if not files:
        raise DataError(f"no measurement files under {path}")
    if mode == "cut" and (inputs is None or len(inputs) < len(files)):
        raise DataError("cut-mode ingestion needs the designed input for every file")

    blocks = []
    for n, fp in enumerate(files):
        t, i, w, ph = _parse_measurement_file(fp)
        if mode == "cut":
            keep = ph == "impulse"
            if not np.any(keep):
                raise DataError(f"{fp}: no impulse samples to keep")
            item = inputs[n]
            if isinstance(item, InputArray):
                profile, v0 = item.profile(), item.v0
            else:
                profile, v0 = item
            t_kept = t[keep]
            # the designed profile starts at the first impulse sample
            t_rel = t_kept - t_kept[0]
            sel = t_rel <= profile.duration + 1e-9
            blocks.append(
                DataBlock(
                    input_id=fp.stem, times=t_rel[sel], voltages=w[keep][sel],
                    profile=profile, v0=v0, phases=ph[keep][sel],
                )
            )
        else:
            profile = _profile_from_samples(t, i, dt)
            blocks.append(
                DataBlock(
                    input_id=fp.stem, times=t - t[0], voltages=w,
                    profile=profile, v0=float(w[0]), phases=ph,
                )
            )
    return DataSet(tuple(blocks), provenance="measured")
