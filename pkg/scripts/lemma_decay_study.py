#!/usr/bin/env python3
"""Run the mean-field residual decay study and print the fitted slopes."""

import sys

from ensemblectl.config import ExperimentConfig
from ensemblectl.experiments import run_lemma_decay


def main() -> int:
    config = ExperimentConfig(deterministic=True)
    result = run_lemma_decay(config, config.out_dir)
    for name, slope in result["slopes"].items():
        print(f"{name}: {slope:+.3f}")
    print(f"wrote {result['csv']}")
    return result["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
