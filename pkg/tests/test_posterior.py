"""Conditional-moment computation: exact discrete enumeration, adaptive
quadrature for the continuous models, medians, and the direct predictive
variance of the squared error.

Continuous goldens are dual-sourced: analytic conditional formulas where
they exist (Gaussian, noiseless channel at y=0), scipy adaptive
quadrature as an independent route elsewhere, plus frozen decimals as
regression anchors.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from riskmmse import (
    ALL,
    InvalidParameter,
    PosteriorMoments,
    QuadratureConfig,
    ZeroPosteriorMass,
    conditional_median,
    conditional_var_of_sq_error,
    posterior_moments,
)
from riskmmse.posterior import _median_from_logpdf


def check_shared_invariants(mom: PosteriorMoments) -> None:
    ev = np.linalg.eigvalsh(mom.sigma)
    assert np.allclose(mom.sigma, mom.sigma.T)
    assert ev.min() >= -1e-10
    assert np.trace(mom.sigma) == pytest.approx(
        mom.s2 - float(mom.m1 @ mom.m1), rel=1e-9, abs=1e-12
    )
    assert mom.v4 >= 0.0
    assert mom.mass > 0.0


# ---------------------------------------------------------------------------
# Discrete path: exact enumeration
# ---------------------------------------------------------------------------


def test_discrete_two_point_skew(two_point_skew):
    mom = posterior_moments(two_point_skew, [0.0])
    assert mom.m1[0] == pytest.approx(1.0, abs=1e-15)
    assert mom.sigma[0, 0] == pytest.approx(2.0, abs=1e-14)
    assert mom.s2 == pytest.approx(3.0, abs=1e-14)
    assert mom.m3[0] == pytest.approx(9.0, abs=1e-13)
    assert mom.v4 == pytest.approx(18.0, abs=1e-13)
    check_shared_invariants(mom)


def test_discrete_two_point_symmetric(two_point_symmetric):
    mom = posterior_moments(two_point_symmetric, [0.0])
    assert mom.m1[0] == pytest.approx(1.0, abs=1e-15)
    assert mom.sigma[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert mom.s2 == pytest.approx(2.0, abs=1e-15)
    assert mom.m3[0] == pytest.approx(4.0, abs=1e-14)
    assert mom.v4 == pytest.approx(4.0, abs=1e-14)


def test_discrete_two_observation_split():
    # joint table with informative y: column 0 flips the odds toward x=0
    from tests.conftest import make_discrete

    model = make_discrete(
        [[0.0], [3.0]], [[1.0 / 3.0, 1.0 / 3.0], [1.0 / 6.0, 1.0 / 6.0]]
    )
    mom = posterior_moments(model, [0.0])
    assert mom.m1[0] == pytest.approx(1.0, abs=1e-14)
    assert mom.mass == pytest.approx(0.5, abs=1e-15)


def test_discrete_planar_moments(planar):
    mom = posterior_moments(planar, [0.0])
    x = np.array([[0.0, 0.0], [2.0, 1.0], [1.0, 3.0]])
    w = np.array([0.5, 0.3, 0.2])
    m1 = w @ x
    np.testing.assert_allclose(mom.m1, m1, atol=1e-14)
    sq = (x**2).sum(axis=1)
    assert mom.s2 == pytest.approx(float(w @ sq), abs=1e-13)
    np.testing.assert_allclose(mom.m3, (w * sq) @ x, atol=1e-13)
    assert mom.v4 == pytest.approx(float(w @ (sq - w @ sq) ** 2), abs=1e-12)
    check_shared_invariants(mom)


def test_discrete_unknown_y_raises(two_point_skew):
    with pytest.raises(ZeroPosteriorMass):
        posterior_moments(two_point_skew, [17.0])


def test_discrete_wrong_y_length(planar):
    with pytest.raises(InvalidParameter):
        posterior_moments(planar, [0.0, 0.0])


# ---------------------------------------------------------------------------
# Gaussian path: analytic conditional formulas
# ---------------------------------------------------------------------------


def test_gaussian_conditional_moments(gauss_1d):
    mom = posterior_moments(gauss_1d, [2.0])
    # posterior N(1, 1/2); m3 = m^3 + 3 m s^2, EX^4 = m^4 + 6 m^2 s^2 + 3 s^4
    assert mom.m1[0] == pytest.approx(1.0, abs=1e-8)
    assert mom.sigma[0, 0] == pytest.approx(0.5, abs=1e-8)
    assert mom.s2 == pytest.approx(1.5, abs=1e-8)
    assert mom.m3[0] == pytest.approx(2.5, abs=1e-8)
    assert mom.v4 == pytest.approx(2.5, abs=1e-8)
    # mass = marginal density of y: N(0, 2) at 2
    assert mom.mass == pytest.approx(math.exp(-1.0) / math.sqrt(4 * math.pi), rel=1e-8)
    check_shared_invariants(mom)


def test_gaussian_vector_conditional_moments():
    from riskmmse import build_model

    rng = np.random.default_rng(5)
    a = rng.normal(size=(2, 2))
    model = build_model(
        {
            "kind": "gaussian_linear",
            "prior_mean": [0.4, -0.7],
            "prior_cov": (a @ a.T + 0.5 * np.eye(2)).tolist(),
            "obs_matrix": [[1.0, 0.3], [0.0, 1.0]],
            "noise_cov": [[0.5, 0.0], [0.0, 0.8]],
        }
    )
    y = np.array([0.9, -0.2])
    mom = posterior_moments(model, y)
    # analytic posterior via normal equations
    s0 = np.asarray(model.prior_cov)
    h = np.asarray(model.obs_matrix)
    r = np.asarray(model.noise_cov)
    prec = np.linalg.inv(s0) + h.T @ np.linalg.inv(r) @ h
    cov = np.linalg.inv(prec)
    mean = cov @ (np.linalg.inv(s0) @ model.prior_mean + h.T @ np.linalg.inv(r) @ y)
    np.testing.assert_allclose(mom.m1, mean, atol=1e-8)
    np.testing.assert_allclose(mom.sigma, cov, atol=1e-8)
    # vector Gaussian fourth-moment identities
    tr = np.trace(cov)
    s2 = tr + float(mean @ mean)
    m3 = s2 * mean + 2.0 * cov @ mean
    v4 = 2.0 * np.trace(cov @ cov) + 4.0 * float(mean @ cov @ mean)
    assert mom.s2 == pytest.approx(s2, rel=1e-8)
    np.testing.assert_allclose(mom.m3, m3, rtol=1e-7, atol=1e-8)
    assert mom.v4 == pytest.approx(v4, rel=1e-7)
    check_shared_invariants(mom)


# ---------------------------------------------------------------------------
# Scenario A: scipy cross-check + frozen regression anchors
# ---------------------------------------------------------------------------


def scen_a_unnormalized(x: np.ndarray, y: float) -> np.ndarray:
    rate, nf = 0.5, 9.0
    var = nf * x * x
    return (
        rate
        * np.exp(-rate * x)
        * np.exp(-((y - x) ** 2) / (2 * var))
        / np.sqrt(2 * np.pi * var)
    )


@pytest.mark.parametrize("y", [0.1, 2.0])
def test_scenario_a_vs_scipy(scenario_a, y):
    mom = posterior_moments(scenario_a, [y])

    def raw(fn):
        val, _ = integrate.quad(
            lambda x: fn(x) * scen_a_unnormalized(np.array([x]), y)[0],
            1e-12,
            80.0,
            limit=400,
        )
        return val

    mass = raw(lambda x: 1.0)
    m1 = raw(lambda x: x) / mass
    m2 = raw(lambda x: x * x) / mass
    m3 = raw(lambda x: x**3) / mass
    m4 = raw(lambda x: x**4) / mass
    assert mom.mass == pytest.approx(mass, rel=1e-8)
    assert mom.m1[0] == pytest.approx(m1, rel=1e-8)
    assert mom.s2 == pytest.approx(m2, rel=1e-8)
    assert mom.m3[0] == pytest.approx(m3, rel=1e-8)
    assert mom.v4 == pytest.approx(m4 - m2 * m2, rel=1e-7)
    check_shared_invariants(mom)


def test_scenario_a_frozen_anchor(scenario_a):
    mom = posterior_moments(scenario_a, [0.1])
    assert mom.m1[0] == pytest.approx(0.494181384, rel=1e-8)
    assert mom.s2 == pytest.approx(0.992251089, rel=1e-8)
    assert mom.m3[0] == pytest.approx(3.96024477, rel=1e-8)
    assert mom.v4 == pytest.approx(22.7559546, rel=1e-8)
    assert mom.mass == pytest.approx(0.254804412, rel=1e-8)


def test_scenario_a_self_convergence(scenario_a):
    base = posterior_moments(scenario_a, [0.7], QuadratureConfig(nodes_per_dim=256))
    fine = posterior_moments(scenario_a, [0.7], QuadratureConfig(nodes_per_dim=512))
    assert fine.m1[0] == pytest.approx(base.m1[0], rel=1e-8)
    assert fine.s2 == pytest.approx(base.s2, rel=1e-8)
    assert fine.m3[0] == pytest.approx(base.m3[0], rel=1e-8)
    assert fine.v4 == pytest.approx(base.v4, rel=1e-8)
    assert fine.mass == pytest.approx(base.mass, rel=1e-8)


def test_scenario_a_degenerate_noise():
    from riskmmse import build_model

    model = build_model({"kind": "exp_state_noise", "noise_factor": 0.0})
    mom = posterior_moments(model, [1.5])
    # y pins x exactly: point mass at 1.5 with prior density as mass
    assert mom.m1[0] == pytest.approx(1.5, abs=1e-14)
    assert mom.s2 == pytest.approx(2.25, abs=1e-14)
    assert mom.v4 == 0.0
    assert mom.mass == pytest.approx(0.5 * math.exp(-0.75), rel=1e-12)
    with pytest.raises(ZeroPosteriorMass):
        posterior_moments(model, [-1.0])


# ---------------------------------------------------------------------------
# Scenario B: scipy dblquad cross-check + frozen anchors
# ---------------------------------------------------------------------------


def scen_b_unnormalized(z: float, h: float, y: float) -> float:
    fz = math.exp(-(z**2) / 4.0) / math.sqrt(4 * math.pi)
    fh = (h / 4.0) * math.exp(-(h**2) / 8.0)
    fy = math.exp(-((y - h * z) ** 2) / 0.2) / math.sqrt(0.2 * math.pi)
    return fz * fh * fy


def test_scenario_b_vs_scipy(scenario_b):
    y = 1.0
    mom = posterior_moments(scenario_b, [y])

    def raw(fn):
        val, _ = integrate.dblquad(
            lambda h, z: fn(z, h) * scen_b_unnormalized(z, h, y),
            -8.0,
            9.0,
            lambda z: 1e-12,
            lambda z: 14.0,
            epsabs=1e-12,
            epsrel=1e-10,
        )
        return val

    mass = raw(lambda z, h: 1.0)
    ez = raw(lambda z, h: z) / mass
    eh = raw(lambda z, h: h) / mass
    es2 = raw(lambda z, h: z * z + h * h) / mass
    es4 = raw(lambda z, h: (z * z + h * h) ** 2) / mass
    assert mom.mass == pytest.approx(mass, rel=1e-7)
    assert mom.m1[0] == pytest.approx(ez, rel=1e-7)
    assert mom.m1[1] == pytest.approx(eh, rel=1e-7)
    assert mom.s2 == pytest.approx(es2, rel=1e-7)
    assert mom.v4 == pytest.approx(es4 - es2 * es2, rel=1e-6)
    check_shared_invariants(mom)


def test_scenario_b_frozen_anchor(scenario_b):
    mom = posterior_moments(scenario_b, [1.0])
    assert mom.m1[0] == pytest.approx(0.667995, rel=1e-6)
    assert mom.m1[1] == pytest.approx(2.01442, rel=1e-6)
    assert mom.s2 == pytest.approx(6.04686364, rel=1e-8)
    assert mom.v4 == pytest.approx(33.8126533, rel=1e-8)


def test_manifold_posterior_y0_analytic(manifold_b):
    # y=0 forces z=0; h keeps a half-Gaussian law with scale 2 after the
    # 1/h curve factor cancels the Rayleigh prefactor
    mom = posterior_moments(manifold_b, [0.0])
    sig = 2.0
    assert mom.m1[0] == pytest.approx(0.0, abs=1e-10)
    assert mom.m1[1] == pytest.approx(sig * math.sqrt(2 / math.pi), rel=1e-8)
    assert mom.s2 == pytest.approx(sig**2, rel=1e-8)
    assert mom.v4 == pytest.approx(2 * sig**4, rel=1e-8)
    check_shared_invariants(mom)


def test_manifold_posterior_y1_vs_scipy(manifold_b):
    # on h z = y the joint collapses to a 1-D density in h with the
    # curve correction 1/h
    y = 1.0
    mom = posterior_moments(manifold_b, [y])

    def raw(fn):
        def integrand(h):
            z = y / h
            fz = math.exp(-(z**2) / 4.0) / math.sqrt(4 * math.pi)
            fh = (h / 4.0) * math.exp(-(h**2) / 8.0)
            return fn(z, h) * fz * fh / h

        val, _ = integrate.quad(integrand, 1e-8, 16.0, limit=400)
        return val

    mass = raw(lambda z, h: 1.0)
    assert mom.m1[0] == pytest.approx(raw(lambda z, h: z) / mass, rel=1e-7)
    assert mom.m1[1] == pytest.approx(raw(lambda z, h: h) / mass, rel=1e-7)
    s2 = raw(lambda z, h: z * z + h * h) / mass
    assert mom.s2 == pytest.approx(s2, rel=1e-7)
    s4 = raw(lambda z, h: (z * z + h * h) ** 2) / mass
    assert mom.v4 == pytest.approx(s4 - s2 * s2, rel=1e-6)
    assert mom.s2 == pytest.approx(6.12132034, rel=1e-8)
    assert mom.v4 == pytest.approx(33.4142136, rel=1e-8)


# ---------------------------------------------------------------------------
# QuadratureConfig validation
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"nodes_per_dim": 8},
        {"truncation_mass_tol": 0.0},
        {"truncation_mass_tol": 1e-3},
        {"refinement_factor": 0},
        {"convergence_rtol": 0.0},
        {"convergence_rtol": 0.5},
    ],
)
def test_quadrature_config_validation(kwargs):
    with pytest.raises(InvalidParameter):
        QuadratureConfig(**kwargs)


# ---------------------------------------------------------------------------
# conditional_median
# ---------------------------------------------------------------------------


def test_median_gaussian_symmetry(gauss_1d):
    assert conditional_median(gauss_1d, [2.0]) == pytest.approx(1.0, abs=1e-7)


def test_median_discrete_left_continuous(two_point_skew):
    # cumulative 2/3 >= 1/2 already at x=0
    assert conditional_median(two_point_skew, [0.0]) == 0.0


def test_median_discrete_tie():
    from tests.conftest import make_discrete

    model = make_discrete([[0.0], [2.0]], [0.5, 0.5])
    # smallest point reaching cumulative 1/2
    assert conditional_median(model, [0.0]) == 0.0


def test_median_exponential_analytic():
    # integrate in log coordinates (window is in g = log x), matching how
    # the positive-support posteriors are handled
    med = _median_from_logpdf(
        lambda x: -x / 2.0, log_coords=True, window=(-20.0, 10.0)
    )
    assert med == pytest.approx(2 * math.log(2), rel=1e-7)


def test_median_component_out_of_range(planar):
    with pytest.raises(InvalidParameter):
        conditional_median(planar, [0.0], component=2)


def test_median_planar_components(planar):
    # z-support sorted {0, 1, 2} w/ cum {.5, .7, 1.}; h {0, 1, 3} w/ {.5, .8, 1.}
    assert conditional_median(planar, [0.0], component=0) == 0.0
    assert conditional_median(planar, [0.0], component=1) == 0.0


def test_median_scenario_a_between_quartiles(scenario_a):
    med = conditional_median(scenario_a, [0.1])
    mom = posterior_moments(scenario_a, [0.1])
    assert 0.0 < med < mom.m1[0]  # right-skewed posterior: median < mean


# ---------------------------------------------------------------------------
# conditional_var_of_sq_error
# ---------------------------------------------------------------------------


def test_var_sq_error_deterministic(two_point_symmetric):
    # |x - 1|^2 = 1 at both support points
    assert conditional_var_of_sq_error(two_point_symmetric, [0.0], [1.0]) == 0.0


def test_var_sq_error_gaussian_component(gauss_1d):
    # (x - m)^2 with x ~ N(m, 1/2): variance 2 sigma^4 = 0.5
    val = conditional_var_of_sq_error(gauss_1d, [2.0], [1.0], component=0)
    assert val == pytest.approx(0.5, rel=1e-7)


def test_var_sq_error_matches_identity(scenario_a):
    # for M=1: Var{(x-xh)^2} = v4 + 4 xh^2 sigma - 4 b xh
    mom = posterior_moments(scenario_a, [0.5])
    b = mom.m3[0] - mom.s2 * mom.m1[0]
    for xh in (0.0, 0.3, 1.1):
        direct = conditional_var_of_sq_error(scenario_a, [0.5], [xh])
        ident = mom.v4 + 4 * xh**2 * mom.sigma[0, 0] - 4 * b * xh
        assert direct == pytest.approx(ident, rel=1e-7)


def test_var_sq_error_validation(gauss_1d):
    with pytest.raises(InvalidParameter):
        conditional_var_of_sq_error(gauss_1d, [2.0], [np.inf])
    with pytest.raises(InvalidParameter):
        conditional_var_of_sq_error(gauss_1d, [2.0], [0.0, 1.0])
    with pytest.raises(InvalidParameter):
        conditional_var_of_sq_error(gauss_1d, [2.0], [0.0], component=3)


def test_var_sq_error_all_constant(gauss_1d):
    assert ALL == "all"
    v_all = conditional_var_of_sq_error(gauss_1d, [2.0], [0.0], component=ALL)
    v_c0 = conditional_var_of_sq_error(gauss_1d, [2.0], [0.0], component=0)
    assert v_all == pytest.approx(v_c0, rel=1e-9)  # M=1: identical by definition
