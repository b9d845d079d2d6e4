"""Command-line entry point: scaling, lemma-decay, simulate, matching.

Usage:
    ensemblectl scaling --seed 1234 --out runs/
    ensemblectl lemma-decay --n-list 30,60,120 --out runs/
    ensemblectl simulate --n 60 --out runs/
    ensemblectl matching --a 1.2 --b 1.0

Exit codes: 0 success, 2 soft-trend-check failure, 3 hard error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Any, Sequence

from .config import ExperimentConfig, load_config
from .experiments import run_lemma_decay, run_matching, run_scaling, run_simulation


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="master random seed")
    parser.add_argument("--config", type=str, default=None, help="YAML config file")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        default=None,
        help="zero wall-time CSV cells so identical runs are byte-identical",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress logs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensemblectl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_scaling = sub.add_parser("scaling", help="population scaling study (CSV + manifest)")
    _add_common(p_scaling)
    p_scaling.add_argument("--n-list", type=_int_list, default=None, help="comma-separated sizes")
    p_scaling.add_argument("--norm", choices=("hinf", "h2"), default=None)
    p_scaling.add_argument("--block", choices=("one", "two"), default=None)

    p_decay = sub.add_parser("lemma-decay", help="mean-field residual decay study")
    _add_common(p_decay)
    p_decay.add_argument("--n-list", type=_int_list, default=None)
    p_decay.add_argument("--m-list", type=_int_list, default=None, help="truncation sizes")

    p_sim = sub.add_parser("simulate", help="closed-loop trajectory rollout")
    _add_common(p_sim)
    p_sim.add_argument("--n", type=int, default=None, help="number of agents")
    p_sim.add_argument("--horizon", type=int, default=None)
    p_sim.add_argument("--sine-mode", choices=("v-channel", "reference"), default=None)

    p_match = sub.add_parser("matching", help="single-agent matching report")
    _add_common(p_match)
    p_match.add_argument("--a", type=float, required=True)
    p_match.add_argument("--b", type=float, required=True)
    p_match.add_argument("--norm", choices=("hinf", "h2"), default=None)
    p_match.add_argument("--block", choices=("one", "two"), default=None)
    p_match.add_argument("--fir-order", type=int, default=None)

    return parser


def _merge_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides: dict[str, Any] = {}
    mapping = {
        "seed": "seed",
        "n_list": "n_list",
        "m_list": "m_list",
        "norm": "norm",
        "block": "block",
        "out": "out_dir",
        "deterministic": "deterministic",
        "n": "sim_n",
        "horizon": "horizon",
        "sine_mode": "sine_mode",
    }
    for arg_name, cfg_name in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[cfg_name] = value
    if getattr(args, "fir_order", None) is not None:
        overrides["synthesis"] = dataclasses.replace(
            config.synthesis, fir_order=args.fir_order
        )
    return dataclasses.replace(config, **overrides) if overrides else config


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _merge_config(args)
        verbose = not args.quiet
        if args.command == "scaling":
            result = run_scaling(config, config.out_dir, verbose)
        elif args.command == "lemma-decay":
            result = run_lemma_decay(config, config.out_dir, verbose)
        elif args.command == "simulate":
            result = run_simulation(config, config.out_dir, verbose)
        elif args.command == "matching":
            result = run_matching(args.a, args.b, config, config.out_dir, verbose)
        else:  # pragma: no cover - argparse enforces the choices
            raise ValueError(f"unknown command {args.command!r}")
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return int(result["exit_code"])


if __name__ == "__main__":
    raise SystemExit(main())
