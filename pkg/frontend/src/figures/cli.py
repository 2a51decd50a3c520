"""Command line: plot_figures <csv> --kind fig1|fig2 --out <path>."""

from __future__ import annotations

import argparse
import sys

from .plot import EmptyDataError, PlotSpec, SchemaError, plot


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plot_figures", description="Render ellrisk experiment CSVs as figures."
    )
    parser.add_argument("csv", help="input CSV produced by the ellrisk CLI")
    parser.add_argument("--kind", required=True, choices=("fig1", "fig2"))
    parser.add_argument("--out", required=True, help="output image path (.png or .svg)")
    args = parser.parse_args(argv)

    try:
        plot(PlotSpec(input_csv=args.csv, kind=args.kind, output=args.out))
    except EmptyDataError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (SchemaError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
