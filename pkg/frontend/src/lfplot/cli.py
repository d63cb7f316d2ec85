"""Command line: plot --in a.csv [--in b.csv] --y train_loss [--logy] --out fig.png"""

from __future__ import annotations

import argparse
import sys

from .plotting import PlotSpec, SchemaError, Y_COLUMNS, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plot", description=__doc__)
    parser.add_argument("--in", dest="inputs", action="append", required=True, help="metrics CSV (repeatable)")
    parser.add_argument("--y", dest="y_column", choices=Y_COLUMNS, default="train_loss")
    parser.add_argument("--logy", action="store_true")
    parser.add_argument("--out", dest="output", required=True, help="output PNG path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec(inputs=args.inputs, y_column=args.y_column, logy=args.logy, output=args.output)
        labels = render(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.output} with series: {', '.join(labels)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
