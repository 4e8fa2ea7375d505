"""Brute-force cross-checks for the closed form and for strong duality.

Everything here deliberately avoids the analytic solve: the pointwise
minimizer is found by nested grid search over x, and the dual maximum by
golden-section search over mu with inner objectives evaluated by direct
enumeration over discrete supports. Agreement with the estimator and dual
modules certifies those code paths without sharing them.
"""

from __future__ import annotations

import math

from dataclasses import dataclass

import numpy as np

from .errors import (
    GridTooCoarse,
    InvalidParameter,
    MultiplierCapExceeded,
    NegativeMu,
)
from .models import DiscreteModel, ModelSpec, build_model
from .posterior import PosteriorMoments, posterior_moments

__all__ = [
    "OracleConfig",
    "lagrangian_bruteforce",
    "discrete_dual_oracle",
    "desk_fixtures",
]

_MU_CAP = 1e8


@dataclass(frozen=True)
class OracleConfig:
    grid_half_width: float = 8.0
    grid_points_per_dim: int = 101
    refine_rounds: int = 30

    def __post_init__(self) -> None:
        if not self.grid_half_width > 0.0:
            raise InvalidParameter(f"grid_half_width must be positive, got {self.grid_half_width}")
        if self.grid_points_per_dim < 101:
            raise InvalidParameter(
                f"grid_points_per_dim must be >= 101, got {self.grid_points_per_dim}"
            )
        if self.refine_rounds < 2:
            raise InvalidParameter(f"refine_rounds must be >= 2, got {self.refine_rounds}")


def lagrangian_bruteforce(moments: PosteriorMoments, mu: float,
                          cfg: OracleConfig | None = None) -> np.ndarray:
    """Grid-search minimizer of 1/2 x'(I+2 mu Sigma)x - (m1 + mu b)'x.

    Nested refinement: evaluate a tensor grid centered at m1, recenter on
    the argmin (lowest flat index on ties), halve the window, repeat. The
    window only travels half its width per round, so a minimizer outside
    the initial reach pins the final argmin to the boundary, which raises
    GridTooCoarse instead of returning a silently clipped point.
    """
    cfg = cfg or OracleConfig()
    if not mu >= 0.0:
        raise NegativeMu(f"mu must be nonnegative, got {mu}")
    m = moments.m1.size
    if m > 2:
        raise InvalidParameter("the brute-force oracle handles at most two state dimensions")

    b = moments.m3 - moments.s2 * moments.m1
    quad = np.eye(m) + 2.0 * mu * moments.sigma
    lin = moments.m1 + mu * b

    center = moments.m1.astype(float).copy()
    half = cfg.grid_half_width
    n = cfg.grid_points_per_dim
    on_boundary = False
    for _ in range(cfg.refine_rounds):
        axes = [np.linspace(center[i] - half, center[i] + half, n) for i in range(m)]
        if m == 1:
            pts = axes[0][:, None]
        else:
            g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
            pts = np.column_stack([g0.ravel(), g1.ravel()])
        vals = 0.5 * np.einsum("ij,jk,ik->i", pts, quad, pts) - pts @ lin
        vmin = float(vals.min())
        near = np.nonzero(vals <= vmin + 1e-12 * (1.0 + abs(vmin)))[0]
        if near.size > 1:
            # grid values tie at float resolution near convergence; the
            # first flat argmin would land wherever enumeration order puts
            # it, so take the tied point nearest the current center
            diffs = pts[near] - center
            flat = int(near[np.argmin(np.einsum("ij,ij->i", diffs, diffs))])
        else:
            flat = int(near[0])
        idx = np.unravel_index(flat, (n,) * m)
        center = np.array([axes[i][idx[i]] for i in range(m)], dtype=float)
        on_boundary = any(k in (0, n - 1) for k in idx)
        half *= 0.5
        if not on_boundary and half <= 1e-7 * (1.0 + float(np.linalg.norm(center))):
            break
    if on_boundary:
        raise GridTooCoarse("minimum pinned to the search boundary at final resolution")
    return center


def discrete_dual_oracle(model: ModelSpec, epsilon: float,
                         cfg: OracleConfig | None = None) -> tuple[float, float, float]:
    """(mu, primal, dual) for a small discrete model, from first principles.

    D(mu) = sum_j w_j min_x [ 1/2 mse_j(x) + (mu/4) var_j(x) ] - (mu/4) eps
    with mse_j and var_j enumerated directly over the support and the inner
    minimum taken by lagrangian_bruteforce (the two objectives differ by an
    x-free constant, so their argmins coincide). The concave D is bracketed
    by doubling and maximized by golden-section search.
    """
    cfg = cfg or OracleConfig()
    if not isinstance(model, DiscreteModel):
        raise InvalidParameter("discrete_dual_oracle requires a discrete model")
    if not epsilon > 0.0:
        raise InvalidParameter(f"epsilon must be positive, got {epsilon}")
    if model.x.shape[0] > 32 or model.y.shape[0] > 32:
        raise InvalidParameter("oracle fixtures are capped at 32 support points")

    marginal = model.marginal_y()
    keep = np.nonzero(marginal > 0.0)[0]
    weights = marginal[keep]
    posts = [model.p[:, j] / marginal[j] for j in keep]
    moms = [posterior_moments(model, model.y[j]) for j in keep]
    xs = model.x

    def mse_of(q: np.ndarray, a: np.ndarray) -> float:
        return float(q @ np.sum((xs - a) ** 2, axis=1))

    def var_of(q: np.ndarray, a: np.ndarray) -> float:
        err = np.sum((xs - a) ** 2, axis=1)
        mean = float(q @ err)
        return float(q @ (err - mean) ** 2)

    def solve_inner(mu: float) -> list[np.ndarray]:
        return [lagrangian_bruteforce(mom, mu, cfg) for mom in moms]

    def dual_at(mu: float) -> float:
        total = 0.0
        for w, q, xstar in zip(weights, posts, solve_inner(mu)):
            total += w * (0.5 * mse_of(q, xstar) + 0.25 * mu * var_of(q, xstar))
        return total - 0.25 * mu * epsilon

    # bracket the maximum of the concave dual by doubling
    mus = [0.0, 1.0]
    fs = [dual_at(0.0), dual_at(1.0)]
    while fs[-1] > fs[-2]:
        if mus[-1] >= _MU_CAP:
            raise MultiplierCapExceeded(
                f"dual still ascending at the multiplier cap {_MU_CAP:.6g}; "
                f"epsilon {epsilon:.6g} sits at or below the smallest achievable risk"
            )
        mus.append(min(2.0 * mus[-1], _MU_CAP))
        fs.append(dual_at(mus[-1]))
    a = mus[-3] if len(mus) >= 3 else 0.0
    b = mus[-1]

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = dual_at(c), dual_at(d)
    for _ in range(200):
        if b - a <= 1e-6 * max(1.0, a):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = dual_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = dual_at(d)

    mu = 0.5 * (a + b)
    xstars = solve_inner(mu)
    primal = sum(w * 0.5 * mse_of(q, xstar)
                 for w, q, xstar in zip(weights, posts, xstars))
    return mu, float(primal), dual_at(mu)


def desk_fixtures() -> list[tuple[str, DiscreteModel, float]]:
    """Small discrete models with feasible risk tolerances.

    Used by the oracle-check command and by the acceptance suite; every
    fixture must certify a near-zero duality gap. The constraint binds on
    all of them except two-point-symmetric, whose estimate never moves
    (the coincidence case) so its risk is identically zero.
    """
    def disc(x, p):
        if not isinstance(p[0], list):
            p = [[v] for v in p]
        y = [[float(j)] for j in range(len(p[0]))]
        return build_model({"kind": "discrete", "x": x, "y": y, "p": p})

    return [
        ("two-point-skew", disc([[0.0], [3.0]], [2.0 / 3.0, 1.0 / 3.0]), 0.5),
        ("two-point-symmetric", disc([[0.0], [2.0]], [0.5, 0.5]), 0.1),
        ("three-point", disc([[0.0], [1.0], [3.0]],
                             [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]), 1.2),
        ("two-observation", disc([[0.0], [3.0]],
                                 [[1.0 / 3.0, 1.0 / 3.0], [1.0 / 6.0, 1.0 / 6.0]]), 0.5),
        ("four-point", disc([[-1.0], [0.0], [1.5], [4.0]],
                            [0.1, 0.4, 0.3, 0.2]), 8.0),
        ("planar", disc([[0.0, 0.0], [2.0, 1.0], [1.0, 3.0]],
                        [0.5, 0.3, 0.2]), 0.5),
    ]
