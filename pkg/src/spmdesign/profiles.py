"""Piecewise-constant current inputs, profiles and voltage traces."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ProfileError

CURRENT_LOWER = -8.8   # A
CURRENT_UPPER = 8.8    # A
V0_LOWER = 3.3         # V
V0_UPPER = 4.1         # V

_TIME_ATOL = 1e-9      # breakpoint alignment tolerance (s)


@dataclass(frozen=True)
class InputArray:
    """Design vector of one input: n_u step amplitudes plus the initial voltage.

    The amplitudes define a right-open step function on [0, t_f] with
    uniform step width tau = t_f / n_u.
    """

    amplitudes: np.ndarray
    v0: float
    t_f: float

    def __post_init__(self):
        amps = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        if amps.ndim != 1 or amps.size < 1:
            raise ProfileError("input array needs at least one amplitude")
        if not np.all(np.isfinite(amps)) or not math.isfinite(self.v0):
            raise ProfileError("non-finite input array entries")
        if self.t_f <= 0:
            raise ProfileError("input horizon must be positive")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_steps(self) -> int:
        return self.amplitudes.size

    @property
    def tau(self) -> float:
        return self.t_f / self.n_steps

    def as_vector(self) -> np.ndarray:
        """[u_1 .. u_n, v0] as one flat design vector."""
        return np.append(self.amplitudes, self.v0)

    @classmethod
    def from_vector(cls, x: np.ndarray, t_f: float) -> "InputArray":
        x = np.asarray(x, dtype=float)
        return cls(amplitudes=x[:-1], v0=float(x[-1]), t_f=t_f)

    def within_bounds(
        self,
        current_bounds=(CURRENT_LOWER, CURRENT_UPPER),
        v0_bounds=(V0_LOWER, V0_UPPER),
    ) -> bool:
        lo, hi = current_bounds
        vlo, vhi = v0_bounds
        return bool(
            np.all(self.amplitudes >= lo)
            and np.all(self.amplitudes <= hi)
            and vlo <= self.v0 <= vhi
        )

    def profile(self) -> "CurrentProfile":
        return CurrentProfile.from_steps(self.amplitudes, self.tau)

    def to_dict(self) -> dict:
        return {
            "amplitudes": self.amplitudes.tolist(),
            "v0": self.v0,
            "t_f": self.t_f,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InputArray":
        return cls(np.asarray(d["amplitudes"], dtype=float), float(d["v0"]), float(d["t_f"]))


@dataclass(frozen=True)
class CurrentProfile:
    """Right-open step function i(t) on [0, duration].

    `breakpoints` has m+1 strictly increasing entries starting at 0;
    `amplitudes` has m entries, amplitude j applying on
    [breakpoints[j], breakpoints[j+1]).  The final point t = duration
    takes the last amplitude.
    """

    breakpoints: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        amps = np.asarray(self.amplitudes, dtype=float)
        if bp.ndim != 1 or amps.ndim != 1 or bp.size != amps.size + 1:
            raise ProfileError("breakpoints must be one longer than amplitudes")
        if bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise ProfileError("breakpoints must start at 0 and strictly increase")
        if not (np.all(np.isfinite(bp)) and np.all(np.isfinite(amps))):
            raise ProfileError("non-finite profile entries")
        bp.setflags(write=False)
        amps.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_steps(cls, amplitudes, step_width: float) -> "CurrentProfile":
        amps = np.atleast_1d(np.asarray(amplitudes, dtype=float))
        bp = np.arange(amps.size + 1) * float(step_width)
        return cls(bp, amps)

    @classmethod
    def zero(cls, duration: float) -> "CurrentProfile":
        return cls(np.array([0.0, float(duration)]), np.array([0.0]))

    @property
    def duration(self) -> float:
        return float(self.breakpoints[-1])

    def concat(self, other: "CurrentProfile") -> "CurrentProfile":
        """Append `other` after this profile; total duration is the sum."""
        bp = np.concatenate([self.breakpoints, self.duration + other.breakpoints[1:]])
        amps = np.concatenate([self.amplitudes, other.amplitudes])
        return CurrentProfile(bp, amps)

    def with_rest(self, rest_duration: float) -> "CurrentProfile":
        """Append a zero-amplitude rest phase."""
        return self.concat(CurrentProfile.zero(rest_duration))

    def value_at(self, t) -> np.ndarray:
        """i(t) with the right-open convention; t == duration maps to the
        last amplitude."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        idx = np.clip(idx, 0, self.amplitudes.size - 1)
        return self.amplitudes[idx]

    def _step_count(self, dt: float) -> int:
        n = round(self.duration / dt)
        if abs(n * dt - self.duration) > _TIME_ATOL:
            raise ProfileError(f"internal step {dt} does not divide duration {self.duration}")
        return n

    def interval_amplitudes(self, dt: float) -> np.ndarray:
        """Amplitude on each internal interval [k dt, (k+1) dt).

        Every breakpoint must be a multiple of dt.
        """
        n = self._step_count(dt)
        for b in self.breakpoints:
            if abs(b - round(b / dt) * dt) > _TIME_ATOL:
                raise ProfileError(f"breakpoint {b} is not aligned to the step {dt}")
        lefts = np.arange(n) * dt
        return self.value_at(lefts)

    def node_values(self, dt: float) -> np.ndarray:
        """i(t_k) on the nodes t_k = k dt, k = 0..K."""
        n = self._step_count(dt)
        return self.value_at(np.arange(n + 1) * dt)


def profile_l2_distance(a: CurrentProfile, b: CurrentProfile) -> float:
    """Exact L2(0, t_f) distance between two step currents on one horizon."""
    if abs(a.duration - b.duration) > _TIME_ATOL:
        raise ProfileError(
            f"cannot compare currents on different horizons ({a.duration} vs {b.duration})"
        )
    cuts = np.union1d(a.breakpoints, b.breakpoints)
    lefts = cuts[:-1]
    widths = np.diff(cuts)
    diff = a.value_at(lefts) - b.value_at(lefts)
    return float(math.sqrt(np.sum(diff * diff * widths)))


@dataclass(frozen=True)
class VoltageTrace:
    """Voltage (and optionally current) sampled on a strictly increasing grid."""

    times: np.ndarray
    voltages: np.ndarray
    currents: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.voltages, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ProfileError("time and voltage arrays must be 1-D and equally long")
        if t.size and np.any(np.diff(t) <= 0):
            raise ProfileError("time grid must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ProfileError("non-finite trace values")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "voltages", v)
        if self.currents is not None:
            c = np.asarray(self.currents, dtype=float)
            if c.shape != t.shape or not np.all(np.isfinite(c)):
                raise ProfileError("current column must match the grid and be finite")
            c.setflags(write=False)
            object.__setattr__(self, "currents", c)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["time_s", "current_A", "voltage_V"])
        cur = self.currents if self.currents is not None else np.zeros_like(self.times)
        for t, i, v in zip(self.times, cur, self.voltages):
            writer.writerow([f"{t:.10g}", f"{i:.12g}", f"{v:.12g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path) -> "VoltageTrace":
        times, currents, voltages = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(row for row in fh if not row.startswith("#"))
            header = next(reader)
            if header[:3] != ["time_s", "current_A", "voltage_V"]:
                raise ProfileError(f"unexpected trace header {header!r} in {path}")
            for row in reader:
                times.append(float(row[0]))
                currents.append(float(row[1]))
                voltages.append(float(row[2]))
        return cls(np.asarray(times), np.asarray(voltages), np.asarray(currents))


def write_profile_csv(path, profile: CurrentProfile) -> None:
    """Lab-replay export: `time_s,current_A` rows at step left endpoints."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "current_A"])
        for t, a in zip(profile.breakpoints[:-1], profile.amplitudes):
            writer.writerow([f"{t:.10g}", f"{a:.12g}"])
        writer.writerow([f"{profile.duration:.10g}", f"{profile.amplitudes[-1]:.12g}"])


def read_profile_csv(path) -> CurrentProfile:
    """Inverse of :func:`write_profile_csv`."""
    times, amps = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader)
        if header[:2] != ["time_s", "current_A"]:
            raise ProfileError(f"unexpected profile header {header!r} in {path}")
        for row in reader:
            times.append(float(row[0]))
            amps.append(float(row[1]))
    if len(times) < 2:
        raise ProfileError("profile file needs at least start and end rows")
    return CurrentProfile(np.asarray(times), np.asarray(amps[:-1]))
