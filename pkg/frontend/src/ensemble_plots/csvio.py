"""Readers for the experiment CSV schemas.

Each reader validates the header and raises a ValueError naming the first
missing column.  No science is recomputed here: cells are parsed as-is.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

TRAJECTORY_COLUMNS = ("step", "agent", "y", "seed")
SCALING_COLUMNS = ("n", "cost_selfish", "cost_compliant", "cost_violating")
DECAY_COLUMNS = (
    "profile_exponent",
    "n",
    "m_trunc",
    "alpha",
    "measured_hinf",
    "bound_hinf",
    "measured_h2",
    "bound_h2",
)


def _read_rows(path: str | Path, required: tuple[str, ...]) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in required:
            if column not in header:
                raise ValueError(f"{path}: missing required column {column!r}")
        return list(reader)


def read_trajectories(path: str | Path) -> dict:
    """Trajectory table -> {'steps', 'agents', 'y' (agents x steps), 'seed'}."""
    rows = _read_rows(path, TRAJECTORY_COLUMNS)
    if not rows:
        raise ValueError(f"{path}: empty trajectory file")
    agents = sorted({int(r["agent"]) for r in rows})
    steps = sorted({int(r["step"]) for r in rows})
    agent_pos = {a: i for i, a in enumerate(agents)}
    step_pos = {s: i for i, s in enumerate(steps)}
    y = np.full((len(agents), len(steps)), np.nan)
    for r in rows:
        y[agent_pos[int(r["agent"])], step_pos[int(r["step"])]] = float(r["y"])
    return {
        "steps": np.asarray(steps),
        "agents": np.asarray(agents),
        "y": y,
        "seed": int(rows[0]["seed"]),
    }


def read_scaling(path: str | Path) -> dict:
    """Scaling table -> column arrays keyed by name."""
    rows = _read_rows(path, SCALING_COLUMNS)
    ok = [r for r in rows if not r.get("error")]
    if not ok:
        raise ValueError(f"{path}: no successful rows")
    return {
        "n": np.array([int(r["n"]) for r in ok]),
        "cost_selfish": np.array([float(r["cost_selfish"]) for r in ok]),
        "cost_compliant": np.array([float(r["cost_compliant"]) for r in ok]),
        "cost_violating": np.array([float(r["cost_violating"]) for r in ok]),
    }


def read_decay(path: str | Path) -> dict:
    """Decay table -> per-profile series at the smallest truncation size."""
    rows = _read_rows(path, DECAY_COLUMNS)
    if not rows:
        raise ValueError(f"{path}: empty decay file")
    m_min = min(int(r["m_trunc"]) for r in rows)
    series: dict[float, dict[str, list[float]]] = {}
    for r in rows:
        if int(r["m_trunc"]) != m_min:
            continue
        p = float(r["profile_exponent"])
        entry = series.setdefault(p, {"n": [], "measured": [], "bound": [], "measured_h2": [], "bound_h2": []})
        entry["n"].append(float(r["n"]))
        entry["measured"].append(float(r["measured_hinf"]))
        entry["bound"].append(float(r["bound_hinf"]))
        entry["measured_h2"].append(float(r["measured_h2"]))
        entry["bound_h2"].append(float(r["bound_h2"]))
    return {
        "m_trunc": m_min,
        "profiles": {p: {k: np.asarray(v) for k, v in e.items()} for p, e in series.items()},
    }
