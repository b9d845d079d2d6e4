#!/usr/bin/env python3
"""Simulate the closed-loop ensembles used for the trajectory figures.

Writes one trajectory CSV per population size (default 60 and 120 agents).
"""

import dataclasses
import sys
from pathlib import Path

from ensemblectl.config import ExperimentConfig
from ensemblectl.experiments import run_simulation


def main() -> int:
    base = ExperimentConfig(deterministic=True)
    code = 0
    for n in (60, 120):
        config = dataclasses.replace(base, sim_n=n)
        result = run_simulation(config, Path(base.out_dir) / f"sim_n{n}")
        print(f"n={n}: wrote {result['csv']}")
        code = max(code, result["exit_code"])
    return code


if __name__ == "__main__":
    sys.exit(main())
