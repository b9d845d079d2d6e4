"""CSV and manifest emission plus the soft trend checks.

CSV cells use ``repr`` for floats (shortest round-trip form), so identical
runs produce byte-identical files.  The manifest sidecar records the full
config echo, its hash, the library version, and wall times; it is not part of
the determinism contract.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Iterable, Sequence

import yaml

from . import __version__
from .config import ExperimentConfig, config_hash, config_to_dict


def format_cell(value: Any) -> str:
    if isinstance(value, float):  # includes numpy scalars; plain repr round-trips
        return repr(float(value))
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


def write_manifest(
    csv_path: str | Path, config: ExperimentConfig, extras: dict[str, Any] | None = None
) -> Path:
    path = Path(csv_path).with_suffix(".manifest")
    payload: dict[str, Any] = {
        "version": __version__,
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
    }
    if extras:
        payload.update(extras)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(payload, fh, sort_keys=True)
    return path


def scaling_trend_checks(records: list[dict[str, Any]]) -> list[tuple[str, bool, str]]:
    """Soft checks mirroring the qualitative shape of the scaling study.

    Returns (name, passed, detail) triples; failures map to exit code 2, not
    an exception, because random draws can wobble at small n.
    """
    ok_rows = [r for r in records if not r.get("error")]
    checks: list[tuple[str, bool, str]] = []
    if len(ok_rows) < 2:
        return [("enough-rows", False, "fewer than two successful rows")]
    selfish = [r["cost_selfish"] for r in ok_rows]
    ratio = max(selfish) / min(selfish)
    checks.append(("selfish-flat", ratio <= 1.05, f"max/min selfish ratio {ratio:.4f}"))
    first, last = ok_rows[0], ok_rows[-1]
    gap_first = first["cost_compliant"] - first["cost_selfish"]
    gap_last = last["cost_compliant"] - last["cost_selfish"]
    checks.append(
        (
            "compliant-converges",
            gap_last < 0.5 * gap_first,
            f"gap {gap_first:.4f} (n={first['n']}) -> {gap_last:.4f} (n={last['n']})",
        )
    )
    checks.append(
        (
            "violating-grows",
            last["cost_violating"] > 1.3 * first["cost_violating"],
            f"violating {first['cost_violating']:.4f} -> {last['cost_violating']:.4f}",
        )
    )
    return checks


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x); positive inputs only."""
    import numpy as np

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if np.count_nonzero(keep) < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])
