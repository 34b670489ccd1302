"""Matplotlib rendering of design records, studies and error traces.

Every figure function returns the Figure; `save_figure` writes PNG files
deterministically (fixed dpi, no timestamps) so report bundles stay
byte-stable under a fixed seed.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .parameters import MU_LOWER, MU_UPPER, MU_NAMES, N_PARAMETERS

_DPI = 110


def save_figure(fig, path) -> None:
    fig.savefig(path, dpi=_DPI, metadata={"Software": "spmdesign"})
    plt.close(fig)


def _profile_steps(profile):
    t = np.repeat(profile.breakpoints, 2)[1:-1]
    a = np.repeat(profile.amplitudes, 2)
    return t, a


def plot_inputs(record) -> "plt.Figure":
    """Designed currents: one panel per collection input, or the single
    concatenated profile."""
    its = record.iterations
    if record.framework == "collection":
        n = len(its)
        ncols = 5
        nrows = int(np.ceil(n / ncols))
        fig, axes = plt.subplots(
            nrows, ncols, figsize=(3.0 * ncols, 2.2 * nrows), sharey=True
        )
        for ax, it in zip(np.atleast_1d(axes).ravel(), its):
            t, a = _profile_steps(it.profile)
            ax.plot(t, a, lw=1.0)
            ax.set_title(f"n={it.n}", fontsize=9)
            ax.text(
                0.03, 0.06, f"$v_0$={it.v0:.3f} V", transform=ax.transAxes, fontsize=8
            )
            ax.grid(alpha=0.3)
        for ax in np.atleast_1d(axes).ravel()[len(its):]:
            ax.set_axis_off()
        fig.supxlabel("time (s)")
        fig.supylabel("current (A)")
    else:
        fig, ax = plt.subplots(figsize=(10, 3))
        t, a = _profile_steps(its[-1].profile)
        ax.plot(t, a, lw=0.9, color="k")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("current (A)")
        ax.set_title(f"concatenated input, {its[-1].profile.duration:.0f} s")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def plot_iteration_metrics(record) -> "plt.Figure":
    """Design uncertainty, estimation cost, parameter error and Hessian
    conditioning against the iteration index."""
    its = record.iterations
    ns = [it.n for it in its]
    panels = [
        ("uncertainty $\\hat\\Phi$", [it.phi_hat for it in its], "linear"),
        ("cost $J$", [it.cost for it in its], "log"),
        ("relative parameter error", [it.rel_err for it in its], "log"),
        ("$\\beta$", [it.beta for it in its], "log"),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    for ax, (title, vals, scale) in zip(axes.ravel(), panels):
        xs = [n for n, v in zip(ns, vals) if v is not None and np.isfinite(v)]
        ys = [v for v in vals if v is not None and np.isfinite(v)]
        if xs:
            ax.plot(xs, ys, "o-", ms=4)
            if scale == "log" and min(ys) > 0:
                ax.set_yscale("log")
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("design iteration $n$")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def plot_study_bars(
    histograms: list[dict],
    baseline_histograms: list[dict] | None = None,
    title: str = "",
) -> "plt.Figure":
    """Per-parameter optimizer histograms; truth marked with a cross.

    With `baseline_histograms` the comparison study is drawn as darker bars
    behind the main one.
    """
    fig, axes = plt.subplots(3, 3, figsize=(11, 7))
    for j, ax in enumerate(axes.ravel()[:N_PARAMETERS]):
        h = histograms[j]
        edges = np.asarray(h["edges"])
        centers = 0.5 * (edges[:-1] + edges[1:])
        width = 0.9 * np.diff(edges)
        if baseline_histograms is not None:
            hb = baseline_histograms[j]
            ax.bar(
                centers, hb["counts"], width=width, color="tab:blue", alpha=0.75,
                label="first input only",
            )
        ax.bar(
            centers, h["counts"], width=width, color="tab:orange", alpha=0.75,
            label="designed inputs",
        )
        if h.get("truth") is not None:
            ax.plot([h["truth"]], [0], "rx", ms=10, clip_on=False, zorder=5)
        ax.set_title(MU_NAMES[j], fontsize=9)
        ax.set_xlim(MU_LOWER[j], MU_UPPER[j])
    handles, labels = axes.ravel()[0].get_legend_handles_labels()
    if handles:
        fig.legend(handles, labels, loc="lower center", ncol=2, fontsize=9)
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout(rect=(0, 0.05, 1, 1))
    return fig


def plot_error_traces(traces: dict) -> "plt.Figure":
    """Relative model-vs-data error over time per input; traces maps
    input id -> (times, errors)."""
    n = len(traces)
    fig, axes = plt.subplots(n, 1, figsize=(9, 2.0 * n), sharex=False, squeeze=False)
    for ax, (input_id, (t, e)) in zip(axes.ravel(), sorted(traces.items())):
        ax.plot(t, e, lw=0.8)
        ax.set_ylabel(input_id, fontsize=8)
        ax.grid(alpha=0.3)
    axes.ravel()[-1].set_xlabel("time (s)")
    fig.suptitle("relative error $(w - v)/w$", fontsize=10)
    fig.tight_layout()
    return fig


def plot_voltage_trace(trace) -> "plt.Figure":
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    ax1.plot(trace.times, trace.voltages, lw=0.9)
    ax1.set_ylabel("voltage (V)")
    ax1.grid(alpha=0.3)
    if trace.currents is not None:
        ax2.plot(trace.times, trace.currents, lw=0.9, color="tab:red")
    ax2.set_ylabel("current (A)")
    ax2.set_xlabel("time (s)")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    return fig
