"""Figure rendering from experiment CSVs.

Every plotted number comes from a CSV cell; the only computation here is the
log-log slope fit annotated on decay plots.  Rendering is deterministic:
fixed dpi, seeded highlight choice, and stripped PNG metadata give
pixel-identical output for identical inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .csvio import read_decay, read_scaling, read_trajectories

GRAY = "0.75"
HIGHLIGHT_CYCLE = plt.rcParams["axes.prop_cycle"].by_key()["color"]


@dataclass
class PlotSpec:
    """What to render: input CSVs, figure kind, and output controls."""

    inputs: list[str]
    kind: str  # "trajectories" | "scaling" | "decay"
    out: str
    highlight: int = 5
    seed: int | None = None
    dpi: int = 150
    log_y: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("trajectories", "scaling", "decay"):
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")
        for path in self.inputs:
            if not Path(path).exists():
                raise FileNotFoundError(path)


@dataclass
class PlotResult:
    """Rendered figure plus the data that went into it (for verification)."""

    path: Path
    panels: list[dict] = field(default_factory=list)
    annotations: dict = field(default_factory=dict)


def _save(fig, spec: PlotSpec) -> Path:
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=spec.dpi, metadata={"Software": None})
    plt.close(fig)
    return out


def plot_trajectories(spec: PlotSpec) -> PlotResult:
    """Stacked panels of agent measurements: gray majority, colored subset.

    The highlighted agents are drawn by a generator seeded from the CSV's
    seed column (or ``spec.seed`` when given), so reruns pick the same ones.
    """
    datasets = [read_trajectories(p) for p in spec.inputs]
    fig, axes = plt.subplots(
        len(datasets), 1, figsize=(9.0, 2.8 * len(datasets)), squeeze=False, sharex=False
    )
    panels = []
    for ax, data in zip(axes[:, 0], datasets):
        n_agents = data["agents"].size
        count = min(spec.highlight, n_agents)
        seed = data["seed"] if spec.seed is None else spec.seed
        rng = np.random.default_rng(seed)
        chosen = set(rng.choice(data["agents"], size=count, replace=False).tolist()) if count else set()
        for idx, agent in enumerate(data["agents"]):
            if agent not in chosen:
                ax.plot(data["steps"], data["y"][idx], color=GRAY, lw=0.6, zorder=1)
        for rank, agent in enumerate(sorted(chosen)):
            idx = int(np.where(data["agents"] == agent)[0][0])
            ax.plot(
                data["steps"],
                data["y"][idx],
                color=HIGHLIGHT_CYCLE[rank % len(HIGHLIGHT_CYCLE)],
                lw=1.4,
                zorder=2,
            )
        ax.set_ylabel("measurement")
        ax.set_title(f"n = {n_agents}")
        panels.append({"n_agents": n_agents, "highlighted": sorted(chosen), "seed": seed})
    axes[-1, 0].set_xlabel("step")
    fig.tight_layout()
    path = _save(fig, spec)
    return PlotResult(path=path, panels=panels)


def plot_scaling(spec: PlotSpec) -> PlotResult:
    """Three cost curves against the population size."""
    data = read_scaling(spec.inputs[0])
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    style = "o" if data["n"].size == 1 else "o-"
    series = {}
    for column in ("cost_selfish", "cost_compliant", "cost_violating"):
        ax.plot(data["n"], data[column], style, label=column, ms=4)
        series[column] = data[column]
    ax.set_xlabel("number of agents n")
    ax.set_ylabel("closed-loop norm")
    if spec.log_y:
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    path = _save(fig, spec)
    return PlotResult(path=path, panels=[{"n": data["n"], **series}])


def fit_slope(n: np.ndarray, values: np.ndarray) -> float:
    keep = (n > 0) & (values > 0)
    if np.count_nonzero(keep) < 2:
        return float("nan")
    return float(np.polyfit(np.log(n[keep]), np.log(values[keep]), 1)[0])


def plot_decay(spec: PlotSpec) -> PlotResult:
    """Log-log measured vs bound curves with fitted-slope annotations."""
    data = read_decay(spec.inputs[0])
    fig, ax = plt.subplots(figsize=(7.0, 4.6))
    annotations = {}
    panels = []
    for rank, (p, series) in enumerate(sorted(data["profiles"].items())):
        color = HIGHLIGHT_CYCLE[rank % len(HIGHLIGHT_CYCLE)]
        n, measured, bound = series["n"], series["measured"], series["bound"]
        positive = measured > 0
        if not np.all(positive):
            warnings.warn(f"profile p={p}: dropping {np.sum(~positive)} nonpositive values", stacklevel=2)
        n_plot, measured_plot = n[positive], measured[positive]
        label = f"p = {p:g}"
        if n_plot.size >= 2:
            slope = fit_slope(n_plot, measured_plot)
            annotations[p] = slope
            label += f" (slope {slope:+.3f})"
        ax.loglog(n_plot, measured_plot, "o-", color=color, label=label, ms=4)
        ax.loglog(n, bound, "--", color=color, alpha=0.5, lw=1.0)
        panels.append({"p": p, "n": n_plot, "measured": measured_plot, "bound": bound})
    ax.set_xlabel("number of agents n")
    ax.set_ylabel(f"truncated mean-field norm (M = {data['m_trunc']})")
    ax.legend()
    fig.tight_layout()
    path = _save(fig, spec)
    return PlotResult(path=path, panels=panels, annotations=annotations)


def render(spec: PlotSpec) -> PlotResult:
    if spec.kind == "trajectories":
        return plot_trajectories(spec)
    if spec.kind == "scaling":
        return plot_scaling(spec)
    return plot_decay(spec)
