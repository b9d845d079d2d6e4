#!/usr/bin/env python3
"""Run the full population-scaling study with the default configuration.

Produces runs/scaling.csv plus a manifest; exit code 2 flags a soft
trend-check failure.
"""

import sys

from ensemblectl.config import ExperimentConfig
from ensemblectl.experiments import run_scaling


def main() -> int:
    config = ExperimentConfig(deterministic=True)
    result = run_scaling(config, config.out_dir)
    print(f"wrote {result['csv']} and {result['manifest']}")
    return result["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
