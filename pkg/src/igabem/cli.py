"""Experiment driver: runs one adaptive study and writes a per-level CSV.

Columns: problem,level,N,kappa,eta,cond_diag,cond_mlas,iters_diag,
iters_mlas,apply_ns,cond_method.  Reals carry 17 significant digits so the
file round-trips exactly; absent values stay blank.
"""

from __future__ import annotations

import argparse
import sys

from . import adaptive
from .assembly import QuadratureSpec

CSV_HEADER = ("problem,level,N,kappa,eta,cond_diag,cond_mlas,"
              "iters_diag,iters_mlas,apply_ns,cond_method")


def format_record(rec: adaptive.LevelRecord) -> str:
    def real(v):
        return "" if v is None else f"{v:.17g}"

    def integer(v):
        return "" if v is None else str(v)

    return ",".join([
        rec.problem, str(rec.level), str(rec.N), real(rec.kappa), real(rec.eta),
        real(rec.cond_diag), real(rec.cond_mlas), integer(rec.iters_diag),
        integer(rec.iters_mlas), real(rec.apply_ns), rec.cond_method,
    ])


def write_csv(path: str, records: list[adaptive.LevelRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(format_record(rec) + "\n")


def parse_record(line: str) -> dict:
    fields = line.rstrip("\n").split(",")
    names = CSV_HEADER.split(",")
    out = dict(zip(names, fields))
    for key in ("kappa", "eta", "cond_diag", "cond_mlas", "apply_ns"):
        out[key] = float(out[key]) if out[key] else None
    for key in ("level", "N", "iters_diag", "iters_mlas"):
        out[key] = int(out[key]) if out[key] else None
    return out


def read_csv(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header!r}")
        return [parse_record(line) for line in fh if line.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="igabem",
        description="Adaptive 2D IGABEM studies with multilevel additive "
                    "Schwarz preconditioning",
    )
    ap.add_argument("--problem", choices=sorted(adaptive.PROBLEMS),
                    help="which study to run")
    ap.add_argument("--theta", type=float, default=0.9,
                    help="Doerfler marking parameter (default 0.9)")
    ap.add_argument("--max-dofs", type=int, default=2000,
                    help="stop once the knot count reaches this bound")
    ap.add_argument("--precond", choices=["diag", "mlas", "both", "none"],
                    default="both")
    ap.add_argument("--tol", type=float, default=1e-8,
                    help="PCG relative residual tolerance")
    ap.add_argument("--seed", type=int, default=0,
                    help="seed for the random timing vectors")
    ap.add_argument("--out", help="output CSV path")
    ap.add_argument("--quad-order", type=int, default=16,
                    help="Gauss order for regular and log-weighted rules")
    ap.add_argument("--threads", type=int, default=1,
                    help="threads for the far-field assembly sweep")
    ap.add_argument("--list", action="store_true",
                    help="print the available problem ids and exit")
    ap.add_argument("--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.list:
        for name in sorted(adaptive.PROBLEMS):
            print(name)
        return 0
    if args.problem is None:
        ap.error("--problem is required (or use --list)")
    if not 0.0 < args.theta <= 1.0:
        ap.error("theta must satisfy 0<theta<=1")
    if args.out is None:
        ap.error("--out is required")
    if args.threads < 1:
        ap.error("--threads must be at least 1")
    try:
        quad = QuadratureSpec(n_gauss=args.quad_order, n_log=args.quad_order)
    except ValueError as exc:
        ap.error(str(exc))
    try:
        run = adaptive.adaptive_loop(
            args.problem, theta=args.theta, max_dofs=args.max_dofs,
            quad=quad, precond=args.precond, tol=args.tol, seed=args.seed,
            threads=args.threads, verbose=args.verbose,
        )
        write_csv(args.out, run.records)
    except OSError as exc:
        print(f"igabem: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
