import subprocess
import sys

import pytest

from plotkit import figures
from plotkit.figures import FigureSpec, SchemaError, render

HEADER = ("problem,level,N,kappa,eta,cond_diag,cond_mlas,"
          "iters_diag,iters_mlas,apply_ns,cond_method")


def write_csv(path, problem="hyper-slit", levels=10, blank_diag=False):
    lines = [HEADER]
    for lvl in range(levels):
        n = 5 * 2**lvl
        cond_diag = "" if blank_diag else f"{3.0 * (lvl + 1):.17g}"
        iters_diag = "" if blank_diag else str(4 + 2 * lvl)
        lines.append(
            f"{problem},{lvl},{n},2,{1.0 / n:.17g},{cond_diag},{5.5:.17g},"
            f"{iters_diag},{12},{1e6 * n:.17g},exact"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_render_three_panels(tmp_path):
    csv = write_csv(tmp_path / "hyper-slit.csv")
    out = render(FigureSpec((str(csv),), str(tmp_path / "figs")))
    assert len(out) == 1
    assert out[0].name == "hyper-slit.png"
    assert out[0].stat().st_size > 10_000


def test_byte_deterministic(tmp_path):
    csv = write_csv(tmp_path / "run.csv")
    a = render(FigureSpec((str(csv),), str(tmp_path / "a")))[0].read_bytes()
    b = render(FigureSpec((str(csv),), str(tmp_path / "b")))[0].read_bytes()
    assert a == b


def test_blank_series_noted(tmp_path):
    csv = write_csv(tmp_path / "mlas-only.csv", blank_diag=True)
    out = render(FigureSpec((str(csv),), str(tmp_path / "figs")))
    assert out[0].exists()


def test_merged_overlay(tmp_path):
    c1 = write_csv(tmp_path / "a.csv", problem="hyper-slit")
    c2 = write_csv(tmp_path / "b.csv", problem="weak-slit")
    out = render(FigureSpec((str(c1), str(c2)), str(tmp_path / "figs"), merged=True))
    assert len(out) == 1 and out[0].name == "merged.png"


def test_missing_column_rejected(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("problem,level,N\nx,0,5\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="header"):
        render(FigureSpec((str(bad),), str(tmp_path / "figs")))


def test_empty_csv_rejected(tmp_path):
    bad = tmp_path / "empty.csv"
    bad.write_text(HEADER + "\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="no data"):
        render(FigureSpec((str(bad),), str(tmp_path / "figs")))


def test_cli_roundtrip(tmp_path):
    csv = write_csv(tmp_path / "cli.csv")
    r = subprocess.run(
        [sys.executable, "-m", "plotkit.cli", "render", "--csv", str(csv),
         "--out", str(tmp_path / "figs")],
        capture_output=True, text=True,
    )
    assert r.returncode == 0
    assert "cli.png" in r.stdout


def test_cli_bad_input(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("nope\n", encoding="utf-8")
    r = subprocess.run(
        [sys.executable, "-m", "plotkit.cli", "render", "--csv", str(bad),
         "--out", str(tmp_path / "figs")],
        capture_output=True, text=True,
    )
    assert r.returncode == 1
    assert "plotkit:" in r.stderr
