"""Sweep and profile pipelines: the quantities behind the figures.

sweep_mu traces the MSE/risk trade-off over a multiplier grid on one shared
observation set, so the curves inherit the exact per-observation
monotonicity of the estimator (risk never increases, MSE never decreases
in mu). posterior_profile packages one posterior density with the three
estimator markers for plotting. write_csv freezes sweeps to disk
byte-deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import OuterIntegrator, _OuterSet
from .errors import InvalidParameter
from .estimator import conditional_mse, conditional_risk, risk_aware_solution
from .models import ModelSpec
from .posterior import (
    QuadratureConfig,
    _check_y,
    _posterior_bundle,
    _profile_density,
    conditional_median,
)

__all__ = [
    "SweepRow",
    "ProfilePoint",
    "default_mu_grid",
    "sweep_mu",
    "posterior_profile",
    "write_csv",
]


@dataclass(frozen=True)
class SweepRow:
    """Aggregated MSE and risk at one multiplier value.

    per_component holds (component, mse_c, risk_c) triples for vector
    states: the component-wise errors of the joint estimate, not of
    separately solved scalar problems.
    """

    mu: float
    mse: float
    mse_se: float
    risk: float
    risk_se: float
    per_component: tuple[tuple[int, float, float], ...] | None = None


@dataclass(frozen=True)
class ProfilePoint:
    x: float
    density: float


def default_mu_grid() -> list[float]:
    """Zero plus 30 log-spaced multipliers covering 1e-3 .. 1e3."""
    return [0.0] + [float(v) for v in np.logspace(-3.0, 3.0, 30)]


def sweep_mu(model: ModelSpec, mu_grid, integ: OuterIntegrator,
             quad: QuadratureConfig | None = None,
             threads: int | None = None) -> list[SweepRow]:
    """One SweepRow per grid value, all sharing the same observation set."""
    grid = [float(m) for m in mu_grid]
    if not grid:
        raise InvalidParameter("mu_grid must be nonempty")
    if any(m < 0.0 for m in grid):
        raise InvalidParameter("mu_grid values must be nonnegative")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise InvalidParameter("mu_grid must be sorted ascending")

    outer = _OuterSet(model, integ, quad or QuadratureConfig(), threads)
    rows: list[SweepRow] = []
    for mu in grid:
        xh = outer.xhat(mu)
        mse, mse_se = outer._aggregate(outer.mse_values(mu, xh))
        risk, risk_se = outer._aggregate(outer.risk_values(mu, xh))
        per: tuple[tuple[int, float, float], ...] | None = None
        if model.state_dim > 1:
            mse_c, risk_c = outer.component_values(mu)
            w = outer.weights
            per = tuple(
                (c, float(w @ mse_c[:, c]), float(w @ risk_c[:, c]))
                for c in range(model.state_dim)
            )
        rows.append(SweepRow(mu, mse, mse_se, risk, risk_se, per))
    return rows


def posterior_profile(model: ModelSpec, y, mu: float, grid_points: int = 1024,
                      quad: QuadratureConfig | None = None,
                      component: int = 0):
    """Density samples of one state component plus estimator markers.

    Returns (points, markers, stats): markers maps each estimator name to
    its value in the profiled component; stats carries the full estimate
    vectors with their conditional MSE and risk, which is where the
    mse(mmse) <= mse(risk_aware) and risk(risk_aware) <= risk(mmse)
    ordering is guaranteed.
    """
    quad = quad or QuadratureConfig()
    if grid_points < 16:
        raise InvalidParameter(f"grid_points must be >= 16, got {grid_points}")
    yv = _check_y(model, y)
    if not 0 <= component < model.state_dim:
        raise InvalidParameter(f"component {component} out of range for M={model.state_dim}")

    xs, dens = _profile_density(model, yv, quad, component, grid_points)
    points = [ProfilePoint(float(a), float(d)) for a, d in zip(xs, dens)]

    moments = _posterior_bundle(model, yv, quad).moments
    sol = risk_aware_solution(moments, mu)
    medians = np.array([
        conditional_median(model, yv, c, quad) for c in range(model.state_dim)
    ])

    markers = {
        "mmse": float(moments.m1[component]),
        "mmae": float(medians[component]),
        "risk_aware": float(sol.xhat[component]),
    }

    def entry(vec: np.ndarray) -> dict:
        return {
            "estimate": [float(v) for v in vec],
            "cond_mse": conditional_mse(moments, vec),
            "cond_risk": conditional_risk(moments, vec),
        }

    stats = {
        "mu": float(mu),
        "component": int(component),
        "y": [float(v) for v in yv],
        "mmse": entry(moments.m1),
        "mmae": entry(medians),
        "risk_aware": entry(sol.xhat),
    }
    return points, markers, stats


def write_csv(rows: list[SweepRow], path) -> None:
    """Sweep rows as CSV: 12 significant digits, LF endings, deterministic.

    Header is mu,mse,mse_se,risk,risk_se plus mse_c{i},risk_c{i} pairs when
    the rows carry per-component values.
    """
    ncomp = 0
    if rows and rows[0].per_component is not None:
        ncomp = len(rows[0].per_component)
    for row in rows:
        have = 0 if row.per_component is None else len(row.per_component)
        if have != ncomp:
            raise InvalidParameter("rows disagree on per-component columns")

    header = "mu,mse,mse_se,risk,risk_se"
    for c in range(ncomp):
        header += f",mse_c{c},risk_c{c}"
    lines = [header]
    for row in rows:
        vals = [row.mu, row.mse, row.mse_se, row.risk, row.risk_se]
        for c, mse_c, risk_c in row.per_component or ():
            vals.extend([mse_c, risk_c])
        lines.append(",".join(format(v, ".12g") for v in vals))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
