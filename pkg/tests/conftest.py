"""Shared model fixtures.

The discrete fixtures are chosen so every moment is hand-computable:
the two-point table {0, 3; 2/3, 1/3} has m1=1, sigma=2, s2=3, m3=9,
b=6, v4=18, and closed-form risk profile 2/(1+4*mu)^2, which anchors
most of the frozen expectations in the per-module tests.
"""

from __future__ import annotations

import numpy as np
import pytest

from riskmmse import (
    CommFadingModel,
    DiscreteModel,
    ExpStateNoiseModel,
    GaussianLinearModel,
    QuadratureConfig,
    build_model,
)


def make_discrete(x, p, y=None) -> DiscreteModel:
    """Build a discrete table; defaults to one observation column."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if p.shape[0] == 1:
        p = p.T
    if y is None:
        y = [[float(j)] for j in range(p.shape[1])]
    return build_model({"kind": "discrete", "x": x, "y": y, "p": p.tolist()})


@pytest.fixture(scope="session")
def two_point_skew() -> DiscreteModel:
    # m1=1, sigma=2, s2=3, m3=9, v4=18; risk(mu) = 2/(1+4 mu)^2
    return make_discrete([[0.0], [3.0]], [2.0 / 3.0, 1.0 / 3.0])


@pytest.fixture(scope="session")
def two_point_symmetric() -> DiscreteModel:
    # b = 2 sigma m1 here, so the risk-aware estimate never moves
    return make_discrete([[0.0], [2.0]], [0.5, 0.5])


@pytest.fixture(scope="session")
def three_point() -> DiscreteModel:
    # minimal achievable risk ~0.857: epsilon below that is infeasible
    return make_discrete([[0.0], [1.0], [3.0]], [1 / 3, 1 / 3, 1 / 3])


@pytest.fixture(scope="session")
def four_point() -> DiscreteModel:
    return make_discrete([[-1.0], [0.0], [1.5], [4.0]], [0.1, 0.4, 0.3, 0.2])


@pytest.fixture(scope="session")
def planar() -> DiscreteModel:
    # 2-D support whose circumcenter zeroes the squared-error variance
    return make_discrete([[0.0, 0.0], [2.0, 1.0], [1.0, 3.0]], [0.5, 0.3, 0.2])


@pytest.fixture(scope="session")
def scenario_a() -> ExpStateNoiseModel:
    return build_model({"kind": "exp_state_noise"})


@pytest.fixture(scope="session")
def scenario_b() -> CommFadingModel:
    return build_model({"kind": "comm_fading"})


@pytest.fixture(scope="session")
def manifold_b() -> CommFadingModel:
    # noiseless channel: posterior lives on the curve h z = y
    return build_model({"kind": "comm_fading", "var_w": 0.0})


@pytest.fixture(scope="session")
def gauss_1d() -> GaussianLinearModel:
    # X ~ N(0,1), Y = X + w, w ~ N(0,1); posterior N(y/2, 1/2)
    return build_model(
        {
            "kind": "gaussian_linear",
            "prior_mean": [0.0],
            "prior_cov": [[1.0]],
            "obs_matrix": [[1.0]],
            "noise_cov": [[1.0]],
        }
    )


@pytest.fixture(scope="session")
def loose_quad() -> QuadratureConfig:
    """Cheap settings for aggregate checks that average many observations."""
    return QuadratureConfig(nodes_per_dim=128, convergence_rtol=2e-2)


@pytest.fixture(scope="session")
def mid_quad() -> QuadratureConfig:
    """Middle ground: accurate enough for 1e-6-level comparisons."""
    return QuadratureConfig(nodes_per_dim=192, convergence_rtol=1e-7)
