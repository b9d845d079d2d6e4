"""Figure CLI: ``plots <kind> --in <csv...> --out <img> [options]``."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .figures import PlotSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plots", description=__doc__)
    parser.add_argument("kind", choices=("trajectories", "scaling", "decay"))
    parser.add_argument("--in", dest="inputs", nargs="+", required=True, help="input CSV file(s)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--highlight", type=int, default=5, help="highlighted agent count")
    parser.add_argument("--seed", type=int, default=None, help="highlight selection seed")
    parser.add_argument("--dpi", type=int, default=150)
    parser.add_argument("--log-y", action="store_true", help="log-scale the y axis (scaling plots)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec(
            inputs=list(args.inputs),
            kind=args.kind,
            out=args.out,
            highlight=args.highlight,
            seed=args.seed,
            dpi=args.dpi,
            log_y=args.log_y,
        )
        result = render(spec)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(result.path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
