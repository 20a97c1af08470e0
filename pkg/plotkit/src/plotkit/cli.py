"""Command line wrapper: `plotkit render --csv a.csv b.csv --out figures/`."""

from __future__ import annotations

import argparse
import sys

from .figures import FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plotkit")
    sub = ap.add_subparsers(dest="command", required=True)
    rd = sub.add_parser("render", help="render three-panel figures from CSVs")
    rd.add_argument("--csv", nargs="+", required=True, help="experiment CSV paths")
    rd.add_argument("--out", required=True, help="output directory")
    rd.add_argument("--merged", action="store_true",
                    help="overlay all CSVs in a single figure")
    rd.add_argument("--format", choices=["png", "svg"], default="png")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(tuple(args.csv), args.out, merged=args.merged, fmt=args.format)
    try:
        written = render(spec)
    except (SchemaError, OSError) as exc:
        print(f"plotkit: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
