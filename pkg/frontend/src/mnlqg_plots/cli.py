"""`plot` command: render figures from mnlqg CSV/JSON outputs.

    plot histogram --in trace_a.csv [trace_b.csv] [--threshold a.json b.json]
                   --out figure.png [--bins N]
    plot sweep     --in sweep.csv --out figure.png [--column rho_H]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import DEFAULT_BINS, FigureSpec, render_histogram, render_sweep


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plot", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)

    hist = sub.add_parser("histogram", help="overlaid q histograms with threshold lines")
    hist.add_argument("--in", dest="inputs", type=Path, nargs="+", required=True,
                      help="trace CSV files (up to two are typical)")
    hist.add_argument("--threshold", type=Path, nargs="*", default=[],
                      help="threshold JSONs, one per trace, in order")
    hist.add_argument("--out", type=Path, required=True, help="output image path")
    hist.add_argument("--bins", type=int, default=DEFAULT_BINS,
                      help=f"histogram bins over the bulk (default {DEFAULT_BINS})")

    sweep = sub.add_parser("sweep", help="sweep-column curves vs sigma2")
    sweep.add_argument("--in", dest="inputs", type=Path, nargs="+", required=True,
                       help="one sweep CSV")
    sweep.add_argument("--out", type=Path, required=True, help="output image path")
    sweep.add_argument("--column", default="rho_H",
                       help="which sweep column to plot (default rho_H)")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.kind == "histogram":
            spec = FigureSpec(
                inputs=tuple(args.inputs), output=args.out, kind="histogram",
                thresholds=tuple(args.threshold), bins=args.bins,
            )
            render_histogram(spec)
        else:
            spec = FigureSpec(
                inputs=tuple(args.inputs), output=args.out, kind="sweep",
                column=args.column,
            )
            render_sweep(spec)
    except (OSError, ValueError, KeyError) as e:
        print(f"plot: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
