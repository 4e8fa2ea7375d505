"""Rendering from committed golden inputs: files, schemas, marker order."""

from __future__ import annotations

import hashlib
import json
import shutil

import pytest

from render import PlotJob, SchemaMismatch, read_profile, read_sweep, render_profile, render_tradeoff, run


def sha256(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# input parsing
# ---------------------------------------------------------------------------


def test_read_sweep_columns(testdata):
    cols = read_sweep(testdata / "sweep_state_noise.csv")
    assert len(cols["mu"]) == 31
    assert cols["mu"][0] == 0.0
    assert all(se > 0.0 for se in cols["risk_se"])


def test_read_sweep_per_component(testdata):
    cols = read_sweep(testdata / "sweep_planar.csv")
    assert "mse_c1" in cols and "risk_c1" in cols
    for mse, c0, c1 in zip(cols["mse"], cols["mse_c0"], cols["mse_c1"]):
        assert mse == pytest.approx(c0 + c1, rel=1e-9)


def test_read_sweep_missing_column(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("mu,mse,mse_se,risk_se\n0,1,0,0\n")
    with pytest.raises(SchemaMismatch, match="risk"):
        read_sweep(bad)


def test_read_sweep_non_numeric(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("mu,mse,mse_se,risk,risk_se\n0,one,0,1,0\n")
    with pytest.raises(SchemaMismatch, match="not a number"):
        read_sweep(bad)


def test_read_sweep_empty(tmp_path):
    bad = tmp_path / "empty.csv"
    bad.write_text("mu,mse,mse_se,risk,risk_se\n")
    with pytest.raises(SchemaMismatch, match="no data rows"):
        read_sweep(bad)


def test_read_profile_malformed(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SchemaMismatch, match="not valid JSON"):
        read_profile(bad)


def test_read_profile_missing_marker(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({
        "grid": [{"x": 0.0, "density": 1.0}],
        "markers": {"mmse": 0.0, "mmae": 0.0},
        "stats": {},
    }))
    with pytest.raises(SchemaMismatch, match="risk_aware"):
        read_profile(bad)


# ---------------------------------------------------------------------------
# golden content checks
# ---------------------------------------------------------------------------


def test_profile_markers_ordered(testdata):
    # skewed posterior: the risk-aware estimate sits above the mean,
    # the median below it
    doc = read_profile(testdata / "profile_state_noise.json")
    m = doc["markers"]
    assert m["risk_aware"] > m["mmse"] > m["mmae"]


def test_profile_mu_zero_markers_coincide(testdata):
    doc = read_profile(testdata / "profile_gauss_mu0.json")
    m = doc["markers"]
    assert m["risk_aware"] == pytest.approx(m["mmse"], abs=1e-9)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def test_render_tradeoff_svg(testdata, tmp_path):
    src = testdata / "sweep_state_noise.csv"
    before = sha256(src)
    out = tmp_path / "tradeoff.svg"
    job = PlotJob(input_path=src, output_path=out, kind="tradeoff")
    assert render_tradeoff(job) == out
    assert out.is_file() and out.stat().st_size > 0
    text = out.read_text()
    assert "mean squared error" in text and "risk" in text
    assert sha256(src) == before


def test_render_tradeoff_component_series(testdata, tmp_path):
    out = tmp_path / "planar.svg"
    render_tradeoff(PlotJob(testdata / "sweep_planar.csv", out, "tradeoff"))
    text = out.read_text()
    for label in ("mse[0]", "mse[1]", "risk[0]", "risk[1]"):
        assert label in text


def test_render_tradeoff_overlay_legend(testdata, tmp_path):
    # a second --input lands in the same axes with per-file legend labels
    copy = tmp_path / "rerun.csv"
    shutil.copy(testdata / "sweep_state_noise.csv", copy)
    out = tmp_path / "overlay.svg"
    job = PlotJob(
        input_path=testdata / "sweep_state_noise.csv",
        output_path=out,
        kind="tradeoff",
        overlays=(copy,),
    )
    render_tradeoff(job)
    text = out.read_text()
    assert "sweep_state_noise: mse" in text
    assert "rerun: mse" in text


def test_render_profile_svg(testdata, tmp_path):
    src = testdata / "profile_state_noise.json"
    before = sha256(src)
    out = tmp_path / "profile.svg"
    render_profile(PlotJob(src, out, "profile"))
    assert out.is_file() and out.stat().st_size > 0
    text = out.read_text()
    for label in ("mmse", "mmae", "risk_aware", "posterior density"):
        assert label in text
    assert sha256(src) == before


def test_render_profile_png(testdata, tmp_path):
    out = tmp_path / "profile.png"
    render_profile(PlotJob(testdata / "profile_state_noise.json", out, "profile"))
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_job_validation(testdata, tmp_path):
    with pytest.raises(ValueError, match="kind"):
        PlotJob(testdata / "sweep_planar.csv", tmp_path / "x.svg", "surface")
    with pytest.raises(FileNotFoundError):
        PlotJob(tmp_path / "nope.csv", tmp_path / "x.svg", "tradeoff")


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def test_cli_tradeoff(testdata, tmp_path):
    out = tmp_path / "fig.svg"
    code = run(["--kind", "tradeoff",
                "--input", str(testdata / "sweep_planar.csv"),
                "--out", str(out)])
    assert code == 0
    assert out.is_file() and out.stat().st_size > 0


def test_cli_default_format_is_vector(testdata, tmp_path, capsys):
    out = tmp_path / "figure"
    code = run(["--kind", "profile",
                "--input", str(testdata / "profile_gauss_mu0.json"),
                "--out", str(out)])
    assert code == 0
    assert out.read_text().lstrip().startswith("<?xml")


def test_cli_missing_input(tmp_path, capsys):
    code = run(["--kind", "tradeoff",
                "--input", str(tmp_path / "ghost.csv"),
                "--out", str(tmp_path / "x.svg")])
    assert code == 2
    assert "ghost.csv" in capsys.readouterr().err


def test_cli_schema_mismatch(testdata, tmp_path, capsys):
    # profile JSON fed to the tradeoff renderer is a format error, not usage
    code = run(["--kind", "tradeoff",
                "--input", str(testdata / "profile_state_noise.json"),
                "--out", str(tmp_path / "x.svg")])
    assert code == 1
    assert "SchemaMismatch" in capsys.readouterr().err


def test_cli_profile_rejects_multiple_inputs(testdata, tmp_path, capsys):
    code = run(["--kind", "profile",
                "--input", str(testdata / "profile_state_noise.json"),
                "--input", str(testdata / "profile_gauss_mu0.json"),
                "--out", str(tmp_path / "x.svg")])
    assert code == 2
    assert "single --input" in capsys.readouterr().err


def test_cli_bad_kind(tmp_path, capsys):
    code = run(["--kind", "heatmap", "--input", "x", "--out", "y"])
    assert code == 2
    capsys.readouterr()
