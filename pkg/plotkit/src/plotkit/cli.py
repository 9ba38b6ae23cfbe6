"""Command-line entry points: one subcommand per figure family."""

import argparse
import sys

from .figures import SchemaError, plot_se_overlay, plot_sweep


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plotkit",
        description="Regenerate figures from simulation sweep CSVs.")
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", help="metric vs. swept parameter")
    sweep.add_argument("--csv", required=True, help="input metric CSV")
    sweep.add_argument("--out", required=True,
                       help="output image path; .png and .pdf are written")
    sweep.add_argument("--x", required=True,
                       help="x axis: the swept parameter or a column name")
    sweep.add_argument("--y", required=True,
                       help="metric column, e.g. ader, ser, ber, nmse_h")

    overlay = sub.add_parser("se-overlay",
                             help="simulation with theory prediction")
    overlay.add_argument("--csv", default=None,
                         help="simulated sweep CSV; omit for prediction only")
    overlay.add_argument("--se", required=True, help="prediction sweep CSV")
    overlay.add_argument("--out", required=True,
                         help="output image path; .png and .pdf are written")
    overlay.add_argument("--y", default="ber", help="metric column")
    return parser


def cli_main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            written = plot_sweep(args.csv, args.x, args.y, args.out)
        else:
            written = plot_se_overlay(args.csv, args.se, args.out,
                                      y_metric=args.y)
    except (SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
