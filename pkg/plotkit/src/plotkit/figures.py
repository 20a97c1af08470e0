"""Three-panel figures from experiment CSVs.

Each experiment file becomes one figure: condition numbers over the knot
count, PCG iteration counts, and the time for a batch of preconditioner
applies with an O(N) guide line anchored at the first timing datum.  All
panels are log-log; rendering is pure (fixed style, no timestamps), so
identical input bytes give identical image bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

EXPECTED_HEADER = [
    "problem", "level", "N", "kappa", "eta", "cond_diag", "cond_mlas",
    "iters_diag", "iters_mlas", "apply_ns", "cond_method",
]

PANELS = (
    ("condition number", [("cond_diag", "diagonal"), ("cond_mlas", "add. Schwarz")]),
    ("number of PCG iterations", [("iters_diag", "diagonal"), ("iters_mlas", "add. Schwarz")]),
    ("time for 100 applies [s]", [("apply_ns", "add. Schwarz")]),
)

_STYLE = {
    "figure.figsize": (12.0, 3.6),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "plotkit",
}


class SchemaError(ValueError):
    """CSV does not match the experiment schema."""


@dataclass(frozen=True)
class FigureSpec:
    csv_paths: tuple[str, ...]
    out_dir: str
    merged: bool = False
    panels: tuple[int, ...] = (0, 1, 2)
    loglog: bool = True
    fmt: str = "png"


@dataclass
class Series:
    label: str
    n: list[float] = field(default_factory=list)
    y: list[float] = field(default_factory=list)


def read_records(path: str) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EXPECTED_HEADER:
            raise SchemaError(f"{path}: unexpected header {header!r}")
        rows = []
        for row in reader:
            if not row or not any(row):
                continue
            rec = dict(zip(EXPECTED_HEADER, row))
            rows.append(rec)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def collect_series(rows: list[dict], column: str, label: str) -> Series:
    series = Series(label)
    for rec in rows:
        if rec[column]:
            series.n.append(float(rec["N"]))
            val = float(rec[column])
            if column == "apply_ns":
                val *= 1e-9
            series.y.append(val)
    return series


def render(spec: FigureSpec) -> list[Path]:
    """Write one figure per CSV (or one merged figure); returns written paths."""
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: list[tuple[str, list[tuple[str, list[dict]]]]]
    if spec.merged:
        groups = [("merged", [(p, read_records(p)) for p in spec.csv_paths])]
    else:
        groups = [(Path(p).stem, [(p, read_records(p))]) for p in spec.csv_paths]

    written = []
    with plt.rc_context(_STYLE):
        for name, sources in groups:
            fig, axes = plt.subplots(1, len(spec.panels))
            if len(spec.panels) == 1:
                axes = [axes]
            for ax, panel_idx in zip(axes, spec.panels):
                title, columns = PANELS[panel_idx]
                drew_guide = False
                empty_labels = []
                for path, rows in sources:
                    problem = rows[0]["problem"]
                    for column, label in columns:
                        series = collect_series(rows, column, label)
                        tag = f"{problem}: {label}" if spec.merged else label
                        if not series.n:
                            empty_labels.append(tag)
                            continue
                        ax.plot(series.n, series.y, marker="o", markersize=3,
                                linewidth=1.0, label=tag)
                        if column == "apply_ns" and not drew_guide:
                            n0, y0 = series.n[0], series.y[0]
                            ax.plot(series.n, [y0 * n / n0 for n in series.n],
                                    linestyle="--", color="gray", linewidth=1.0,
                                    label="O(N)")
                            drew_guide = True
                if spec.loglog:
                    ax.set_xscale("log")
                    ax.set_yscale("log")
                ax.set_xlabel("number of knots N")
                ax.set_title(title)
                if empty_labels:
                    ax.text(0.02, 0.02, "no data: " + ", ".join(sorted(set(empty_labels))),
                            transform=ax.transAxes, fontsize=7, color="dimgray")
                ax.legend(fontsize=7)
            fig.tight_layout()
            target = out_dir / f"{name}.{spec.fmt}"
            fig.savefig(target, metadata=_deterministic_metadata(spec.fmt))
            plt.close(fig)
            written.append(target)
    return written


def _deterministic_metadata(fmt: str):
    if fmt == "png":
        return {"Software": "plotkit"}
    if fmt == "svg":
        return {"Date": None}
    return None
