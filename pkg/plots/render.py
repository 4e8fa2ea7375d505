#!/usr/bin/env python3
"""Render figures from sweep CSV and profile JSON files.

This package draws; it never computes. Inputs come from the riskmmse
command line (`riskmmse sweep --out ...`, `riskmmse profile --out ...`)
and are opened read-only. Output format follows the --out extension,
defaulting to SVG when there is none.

Exit codes mirror the producer: 0 on success, 2 on usage errors
(missing files, bad flags), 1 when an input exists but does not match
the declared format (SchemaMismatch).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

# keep text as text so the vector output stays small and searchable
plt.rcParams["svg.fonttype"] = "none"

BASE_COLUMNS = ["mu", "mse", "mse_se", "risk", "risk_se"]

MSE_COLOR = "#1f77b4"
RISK_COLOR = "#d62728"
MARKER_STYLES = {
    "mmse": ("#1f77b4", "--"),
    "mmae": ("#2ca02c", ":"),
    "risk_aware": ("#d62728", "-"),
}


class SchemaMismatch(Exception):
    """Input file exists but is not a sweep CSV / profile JSON."""


@dataclass(frozen=True)
class PlotJob:
    input_path: Path
    output_path: Path
    kind: str
    # extra sweep files drawn into the same axes (tradeoff only)
    overlays: tuple[Path, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.kind not in ("tradeoff", "profile"):
            raise ValueError(f"kind must be 'tradeoff' or 'profile', got {self.kind!r}")
        for path in (self.input_path, *self.overlays):
            if not path.is_file():
                raise FileNotFoundError(f"input file not found: {path}")


# -- input parsing ------------------------------------------------------------


def read_sweep(path: Path) -> dict[str, list[float]]:
    """Sweep CSV as column -> values, validating the producer's header."""
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in BASE_COLUMNS if c not in header]
        if missing:
            raise SchemaMismatch(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise SchemaMismatch(f"{path}: no data rows")
    cols: dict[str, list[float]] = {c: [] for c in header}
    for i, row in enumerate(rows, start=2):
        for c in header:
            cell = row[c]
            if cell is None:
                raise SchemaMismatch(f"{path}: line {i} has too few fields")
            try:
                cols[c].append(float(cell))
            except ValueError:
                raise SchemaMismatch(
                    f"{path}: line {i}, column {c}: not a number: {cell!r}"
                ) from None
    return cols


def component_count(cols: dict[str, list[float]]) -> int:
    n = 0
    while f"mse_c{n}" in cols and f"risk_c{n}" in cols:
        n += 1
    return n


def read_profile(path: Path) -> dict:
    try:
        with open(path, encoding="ascii") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaMismatch(f"{path}: not valid JSON: {exc}") from None
    for key in ("grid", "markers", "stats"):
        if key not in doc:
            raise SchemaMismatch(f"{path}: missing top-level key {key!r}")
    grid = doc["grid"]
    if not grid or not all(("x" in p and "density" in p) for p in grid):
        raise SchemaMismatch(f"{path}: grid must be a list of x/density points")
    markers = doc["markers"]
    missing = [k for k in MARKER_STYLES if k not in markers]
    if missing:
        raise SchemaMismatch(f"{path}: missing marker(s) {', '.join(missing)}")
    return doc


# -- rendering ----------------------------------------------------------------


def _save(fig, out: Path) -> None:
    kwargs = {} if out.suffix else {"format": "svg"}
    fig.savefig(out, bbox_inches="tight", **kwargs)
    plt.close(fig)


def _draw_sweep(ax_mse, ax_risk, cols, label_prefix: str) -> None:
    mu = cols["mu"]
    n_comp = component_count(cols)

    def put(ax, ys, ses, color, label, style="-"):
        ax.plot(mu, ys, color=color, linestyle=style, label=label, linewidth=1.6)
        if any(se > 0.0 for se in ses):
            lo = [y - 3.0 * se for y, se in zip(ys, ses)]
            hi = [y + 3.0 * se for y, se in zip(ys, ses)]
            ax.fill_between(mu, lo, hi, color=color, alpha=0.15, linewidth=0)

    put(ax_mse, cols["mse"], cols["mse_se"], MSE_COLOR, f"{label_prefix}mse")
    put(ax_risk, cols["risk"], cols["risk_se"], RISK_COLOR, f"{label_prefix}risk")
    zeros = [0.0] * len(mu)
    for c in range(n_comp):
        shade = 0.75 - 0.35 * c / max(1, n_comp - 1)
        put(ax_mse, cols[f"mse_c{c}"], zeros, MSE_COLOR,
            f"{label_prefix}mse[{c}]", style=(0, (4, 1 + 2 * c)))
        ax_mse.lines[-1].set_alpha(shade)
        put(ax_risk, cols[f"risk_c{c}"], zeros, RISK_COLOR,
            f"{label_prefix}risk[{c}]", style=(0, (4, 1 + 2 * c)))
        ax_risk.lines[-1].set_alpha(shade)


def render_tradeoff(job: PlotJob) -> Path:
    """MSE (left axis) and risk (right axis) against the multiplier."""
    inputs = [job.input_path, *job.overlays]
    sweeps = [read_sweep(p) for p in inputs]

    fig, ax_mse = plt.subplots(figsize=(7.2, 4.4))
    ax_risk = ax_mse.twinx()
    for path, cols in zip(inputs, sweeps):
        prefix = f"{path.stem}: " if len(inputs) > 1 else ""
        _draw_sweep(ax_mse, ax_risk, cols, prefix)

    positive = [v for cols in sweeps for v in cols["mu"] if v > 0.0]
    if positive:
        ax_mse.set_xscale("symlog", linthresh=min(positive))
    ax_mse.set_xlabel("multiplier")
    ax_mse.set_ylabel("mean squared error", color=MSE_COLOR)
    ax_risk.set_ylabel("risk", color=RISK_COLOR)
    ax_mse.tick_params(axis="y", labelcolor=MSE_COLOR)
    ax_risk.tick_params(axis="y", labelcolor=RISK_COLOR)
    handles = ax_mse.get_lines() + ax_risk.get_lines()
    ax_mse.legend(handles, [h.get_label() for h in handles],
                  loc="center right", fontsize=8)
    ax_mse.set_title("error / risk trade-off")
    _save(fig, job.output_path)
    return job.output_path


def render_profile(job: PlotJob) -> Path:
    """Posterior density with one vertical line per estimator."""
    doc = read_profile(job.input_path)
    xs = [p["x"] for p in doc["grid"]]
    dens = [p["density"] for p in doc["grid"]]

    fig, ax = plt.subplots(figsize=(7.2, 4.4))
    ax.plot(xs, dens, color="#444444", linewidth=1.6, label="posterior density")
    ax.fill_between(xs, dens, color="#444444", alpha=0.08, linewidth=0)
    for name, (color, style) in MARKER_STYLES.items():
        ax.axvline(doc["markers"][name], color=color, linestyle=style,
                   linewidth=1.4, label=name)
    stats = doc.get("stats", {})
    bits = []
    if "y" in stats:
        bits.append(f"y = {stats['y']}")
    if "mu" in stats:
        bits.append(f"multiplier = {stats['mu']}")
    ax.set_title("estimates on the posterior" + (f" ({', '.join(bits)})" if bits else ""))
    ax.set_xlabel("state")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    _save(fig, job.output_path)
    return job.output_path


# -- command line -------------------------------------------------------------


def run(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="render",
        description="Draw trade-off and profile figures from riskmmse outputs.",
    )
    ap.add_argument("--kind", required=True, choices=["tradeoff", "profile"])
    ap.add_argument("--input", required=True, action="append",
                    help="input file; repeat to overlay sweeps (tradeoff only)")
    ap.add_argument("--out", required=True, help="image file to write")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    if args.kind == "profile" and len(args.input) > 1:
        print("error: --kind profile accepts a single --input", file=sys.stderr)
        return 2
    try:
        job = PlotJob(
            input_path=Path(args.input[0]),
            output_path=Path(args.out),
            kind=args.kind,
            overlays=tuple(Path(p) for p in args.input[1:]),
        )
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if job.kind == "tradeoff":
            render_tradeoff(job)
        else:
            render_profile(job)
    except SchemaMismatch as exc:
        print(f"SchemaMismatch: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(run())
