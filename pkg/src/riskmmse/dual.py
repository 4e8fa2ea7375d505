"""Dual function, multiplier search, and KKT certificates.

The constrained problem trades expected squared error against the expected
predictive variance of the squared error (the risk). Its Lagrangian dual
is a concave scalar function of the multiplier mu,

    D(mu) = 1/2 E{s2} + 1/4 ( mu E{v4} - 2 E{xhat'(I + 2 mu Sigma) xhat}
                              - mu epsilon ),

with xhat the closed-form estimate at mu. Because the expected risk is
nonincreasing in mu, the optimal multiplier for a tolerance epsilon is
found by bisecting the map mu -> expected_risk(mu) - epsilon; every
evaluation reuses the same per-observation posterior moments, which do not
depend on mu.

Outer expectations over Y run in one of three modes: seeded Monte Carlo
with common random numbers across mu values, deterministic quadrature over
the marginal of Y, or exact summation over a discrete support.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidParameter,
    MultiplierCapExceeded,
    QuadratureNotConverged,
    UnsupportedKind,
    ZeroPosteriorMass,
)
from .models import DiscreteModel, ModelSpec, _sample_arrays
from .posterior import (
    QuadratureConfig,
    _Bundle,
    _find_box,
    _integrate,
    _param_posterior,
    _posterior_bundle,
    _ParamPosterior,
)

__all__ = [
    "OuterIntegrator",
    "KktReport",
    "expected_risk",
    "expected_mse",
    "dual_value",
    "solve_mu",
]

_MODES = ("monte_carlo", "y_quadrature", "discrete_exact")


@dataclass(frozen=True)
class OuterIntegrator:
    """How the outer expectation over Y is realized.

    monte_carlo: n_outer seeded joint samples, reused across every mu
    (common random numbers). y_quadrature: deterministic composite rule
    with n_outer nodes on an adaptively truncated interval of the marginal
    of Y (scalar observations only). discrete_exact: sum over the y support
    with marginal weights, zero standard error.
    """

    mode: str
    n_outer: int = 2000
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise InvalidParameter(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.mode == "monte_carlo":
            if self.n_outer < 100:
                raise InvalidParameter(f"monte_carlo needs n_outer >= 100, got {self.n_outer}")
            if self.seed is None:
                raise InvalidParameter("monte_carlo requires an explicit seed")
        if self.mode == "y_quadrature" and self.n_outer < 32:
            raise InvalidParameter(f"y_quadrature needs n_outer >= 32, got {self.n_outer}")


@dataclass(frozen=True)
class KktReport:
    """Numerical certificate for one solved multiplier."""

    mu_star: float
    epsilon: float
    expected_risk: float
    slack: float
    dual_value: float
    primal_value: float
    comp_slackness: float
    gap: float

    def as_dict(self) -> dict[str, float]:
        return {
            "mu_star": self.mu_star,
            "epsilon": self.epsilon,
            "expected_risk": self.expected_risk,
            "slack": self.slack,
            "dual_value": self.dual_value,
            "primal_value": self.primal_value,
            "comp_slackness": self.comp_slackness,
            "gap": self.gap,
        }


class _MarginalIntegrand(_ParamPosterior):
    """The marginal density of a scalar observation, used to place the
    deterministic y-quadrature nodes. Each evaluation runs one coarse inner
    integration; the boundary rule's fourth-power weighting then sizes the
    interval generously enough for risk integrands that grow like y^4."""

    def __init__(self, model: ModelSpec, window: tuple[float, float]):
        self.model = model
        self.dim = 1
        self.state_dim = 1
        self.log_transform = (False,)
        self._window = window
        self._coarse = QuadratureConfig(nodes_per_dim=48, truncation_mass_tol=1e-8,
                                        refinement_factor=1)

    def _logmass_one(self, y: float) -> float:
        pp = _param_posterior(self.model, np.array([y]))
        if pp is None:
            raise UnsupportedKind("y_quadrature does not support degenerate models")
        try:
            box = _find_box(pp)
            grid = _integrate(pp, box, self._coarse.nodes_per_dim)
        except (ZeroPosteriorMass, QuadratureNotConverged):
            return -np.inf
        return grid.logmass

    def log_weight(self, u: np.ndarray) -> np.ndarray:
        return np.array([self._logmass_one(float(v)) for v in u[:, 0]])

    def to_state(self, u: np.ndarray) -> np.ndarray:
        return u

    def init_window(self) -> list[tuple[float, float]]:
        return [self._window]


def _marginal_window(model: ModelSpec) -> tuple[float, float]:
    """Crude symmetric window containing the bulk of the marginal of Y."""
    from .models import CommFadingModel, ExpStateNoiseModel, GaussianLinearModel

    if isinstance(model, ExpStateNoiseModel):
        half = 20.0 * model.mean_x * (1.0 + math.sqrt(model.noise_factor))
        return (-half, half)
    if isinstance(model, CommFadingModel):
        half = 20.0 * (math.sqrt(model.var_z) * model.rayleigh_scale + math.sqrt(model.var_w) + 1.0)
        return (-half, half)
    if isinstance(model, GaussianLinearModel):
        var = float((model.obs_matrix @ model.prior_cov @ model.obs_matrix.T
                     + model.noise_cov)[0, 0])
        mean = float((model.obs_matrix @ model.prior_mean)[0])
        half = 14.0 * math.sqrt(max(var, 1e-12))
        return (mean - half, mean + half)
    raise UnsupportedKind(f"y_quadrature is not defined for kind {model.kind!r}")


class _OuterSet:
    """Observations, outer weights, and cached posterior bundles.

    Building this once per solve or sweep is what makes the mu search
    cheap: the moments are mu-independent, so each new mu costs one batched
    linear solve plus a few weighted reductions.
    """

    def __init__(self, model: ModelSpec, integ: OuterIntegrator,
                 quad: QuadratureConfig, threads: int | None = None):
        self.model = model
        self.integ = integ
        self.is_mc = integ.mode == "monte_carlo"

        if integ.mode == "discrete_exact":
            if not isinstance(model, DiscreteModel):
                raise UnsupportedKind("discrete_exact requires a discrete model")
            weights = model.marginal_y()
            keep = weights > 0.0
            ys = model.y[keep]
            weights = weights[keep]
        elif integ.mode == "monte_carlo":
            _, ys = _sample_arrays(model, integ.n_outer, int(integ.seed))
            weights = np.full(ys.shape[0], 1.0 / ys.shape[0])
        else:  # y_quadrature
            if model.obs_dim != 1:
                raise UnsupportedKind("y_quadrature requires a scalar observation")
            if isinstance(model, DiscreteModel):
                raise UnsupportedKind("y_quadrature requires a continuous model")
            ys, weights = self._quadrature_nodes(model, integ, quad)

        self.ys = ys
        self.weights = weights / float(np.sum(weights))
        self._load_bundles(quad, threads)

    def _quadrature_nodes(self, model: ModelSpec, integ: OuterIntegrator,
                          quad: QuadratureConfig) -> tuple[np.ndarray, np.ndarray]:
        from .posterior import _composite_rule, _panel_rule

        marg = _MarginalIntegrand(model, _marginal_window(model))
        box = _find_box(marg)
        lo, hi = float(box.lo[0]), float(box.hi[0])

        # first pass: probe the marginal on a uniform rule with cheap inner
        # integrations to learn where the mass sits. Some marginals (state-
        # scaled noise) have an integrable singularity, so uniform panels
        # alone converge too slowly.
        probe_nodes, probe_wts = _composite_rule(lo, hi, max(integ.n_outer, 256))
        logm = marg.log_weight(probe_nodes[:, None])
        peak = float(np.max(logm))
        if not np.isfinite(peak):
            raise ZeroPosteriorMass("marginal mass vanished on the probe grid")
        mass = np.where(np.isfinite(logm), np.exp(logm - peak), 0.0) * probe_wts
        k_probe = probe_nodes.size // 16

        # second pass: equal-mass panel edges via the inverse CDF. Mass is
        # counted under y^0, y^2, and y^4 weightings, because the outer
        # integrands grow like those powers (normalization, squared error,
        # risk); grading on plain mass alone starves the tail and can halve
        # the expected risk. A uniform floor keeps dead stretches covered.
        share = np.full(k_probe, 0.25 / k_probe)
        for power in (0, 2, 4):
            pm = (mass * probe_nodes**power).reshape(k_probe, 16).sum(axis=1)
            total = float(pm.sum())
            if total > 0.0:
                share += 0.25 * pm / total
        share /= float(share.sum())
        cdf = np.concatenate([[0.0], np.cumsum(share)])
        cdf /= cdf[-1]
        probe_edges = np.linspace(lo, hi, k_probe + 1)
        k_out = max(integ.n_outer // 16, 2)
        edges = np.interp(np.linspace(0.0, 1.0, k_out + 1), cdf, probe_edges)
        nodes, wts = _panel_rule(edges)
        ys = nodes[:, None]
        # weights folded with the true marginal mass at each node, computed
        # from the full-accuracy bundles loaded right after this
        self._base_wts = wts
        return ys, np.ones_like(wts)

    def _load_bundles(self, quad: QuadratureConfig, threads: int | None) -> None:
        # deduplicate repeated observations (discrete supports especially)
        keys = [row.tobytes() for row in self.ys]
        unique: dict[bytes, int] = {}
        order: list[np.ndarray] = []
        for key, row in zip(keys, self.ys):
            if key not in unique:
                unique[key] = len(order)
                order.append(row)

        def work(row: np.ndarray) -> _Bundle:
            return _posterior_bundle(self.model, row, quad)

        if threads is not None and threads > 1 and len(order) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                bundles = list(pool.map(work, order))
        else:
            bundles = [work(row) for row in order]
        self.bundles = [bundles[unique[k]] for k in keys]

        n = len(self.bundles)
        m = self.model.state_dim
        self.M1 = np.stack([b.moments.m1 for b in self.bundles])
        self.SIG = np.stack([b.moments.sigma for b in self.bundles])
        self.B = np.stack([b.moments.m3 - b.moments.s2 * b.moments.m1 for b in self.bundles])
        self.S2 = np.array([b.moments.s2 for b in self.bundles])
        self.V4 = np.array([b.moments.v4 for b in self.bundles])
        self.CM = np.stack([b.comp_mean for b in self.bundles])
        self.CC = np.stack([b.comp_central for b in self.bundles])
        self.eye = np.eye(m)

        if self.integ.mode == "y_quadrature":
            mass = np.array([b.moments.mass for b in self.bundles])
            w = self._base_wts * mass
            total = float(np.sum(w))
            if total <= 0.0:
                raise ZeroDivisionError("marginal mass vanished on the y grid")
            self.weights = w / total

    # -- batched per-observation quantities ---------------------------------

    def xhat(self, mu: float) -> np.ndarray:
        if mu == 0.0:
            return self.M1.copy()
        lhs = self.eye[None, :, :] + 2.0 * mu * self.SIG
        rhs = self.M1 + mu * self.B
        return np.linalg.solve(lhs, rhs[..., None])[..., 0]

    def risk_values(self, mu: float, xh: np.ndarray | None = None) -> np.ndarray:
        xh = self.xhat(mu) if xh is None else xh
        quad_form = np.einsum("ij,ijk,ik->i", xh, self.SIG, xh)
        vals = self.V4 + 4.0 * quad_form - 4.0 * np.einsum("ij,ij->i", self.B, xh)
        return np.clip(vals, 0.0, None)

    def mse_values(self, mu: float, xh: np.ndarray | None = None) -> np.ndarray:
        xh = self.xhat(mu) if xh is None else xh
        return self.S2 - 2.0 * np.einsum("ij,ij->i", self.M1, xh) + np.einsum("ij,ij->i", xh, xh)

    def _aggregate(self, vals: np.ndarray) -> tuple[float, float]:
        value = float(np.sum(self.weights * vals))
        if self.is_mc and vals.size > 1:
            se = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
        else:
            se = 0.0
        return value, se

    def expected_risk(self, mu: float) -> tuple[float, float]:
        return self._aggregate(self.risk_values(mu))

    def expected_mse(self, mu: float) -> tuple[float, float]:
        return self._aggregate(self.mse_values(mu))

    def dual_value(self, mu: float, epsilon: float) -> float:
        xh = self.xhat(mu)
        quad_form = np.einsum("ij,ij->i", xh, xh) + 2.0 * mu * np.einsum(
            "ij,ijk,ik->i", xh, self.SIG, xh)
        e_s2 = float(np.sum(self.weights * self.S2))
        e_v4 = float(np.sum(self.weights * self.V4))
        e_q = float(np.sum(self.weights * quad_form))
        return 0.5 * e_s2 + 0.25 * (mu * e_v4 - 2.0 * e_q - mu * epsilon)

    def component_values(self, mu: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-component (mse_c, risk_c) arrays of shape (n_obs, M) for the
        joint estimate at mu, via the cached central moments."""
        xh = self.xhat(mu)
        delta = self.CM - xh
        mu2 = self.CC[:, :, 0]
        mu3 = self.CC[:, :, 1]
        mu4 = self.CC[:, :, 2]
        mse_c = mu2 + delta**2
        risk_c = mu4 - mu2**2 + 4.0 * delta * mu3 + 4.0 * delta**2 * mu2
        return mse_c, np.clip(risk_c, 0.0, None)


def expected_risk(model: ModelSpec, mu: float, integ: OuterIntegrator,
                  quad: QuadratureConfig | None = None,
                  threads: int | None = None) -> tuple[float, float]:
    """Outer average of the conditional risk at the closed-form estimate.

    Returns (value, std_err); std_err is zero for the deterministic modes.
    """
    if not mu >= 0.0:
        raise InvalidParameter(f"mu must be nonnegative, got {mu}")
    outer = _OuterSet(model, integ, quad or QuadratureConfig(), threads)
    return outer.expected_risk(mu)


def expected_mse(model: ModelSpec, mu: float, integ: OuterIntegrator,
                 quad: QuadratureConfig | None = None,
                 threads: int | None = None) -> tuple[float, float]:
    """Outer average of the conditional MSE at the closed-form estimate."""
    if not mu >= 0.0:
        raise InvalidParameter(f"mu must be nonnegative, got {mu}")
    outer = _OuterSet(model, integ, quad or QuadratureConfig(), threads)
    return outer.expected_mse(mu)


def dual_value(model: ModelSpec, mu: float, epsilon: float, integ: OuterIntegrator,
               quad: QuadratureConfig | None = None,
               threads: int | None = None) -> float:
    """Evaluate the concave dual function D(mu) for tolerance epsilon."""
    if not mu >= 0.0:
        raise InvalidParameter(f"mu must be nonnegative, got {mu}")
    if not epsilon > 0.0:
        raise InvalidParameter(f"epsilon must be positive, got {epsilon}")
    outer = _OuterSet(model, integ, quad or QuadratureConfig(), threads)
    return outer.dual_value(mu, epsilon)


def _report(outer: _OuterSet, mu: float, epsilon: float) -> KktReport:
    risk, _ = outer.expected_risk(mu)
    mse, _ = outer.expected_mse(mu)
    dual = outer.dual_value(mu, epsilon)
    primal = 0.5 * mse
    return KktReport(
        mu_star=mu,
        epsilon=epsilon,
        expected_risk=risk,
        slack=epsilon - risk,
        dual_value=dual,
        primal_value=primal,
        comp_slackness=mu * (risk - epsilon),
        gap=primal - dual,
    )


def solve_mu(model: ModelSpec, epsilon: float, tol: float = 1e-6,
             mu_cap: float = 1e8, integ: OuterIntegrator | None = None,
             quad: QuadratureConfig | None = None,
             threads: int | None = None) -> KktReport:
    """Find the multiplier whose expected risk matches the tolerance.

    If the risk-neutral estimate is already feasible the multiplier is
    zero. Otherwise the bracket [0, mu_hi] is grown by doubling from mu = 1
    up to mu_cap (raising MultiplierCapExceeded when even mu_cap cannot
    reach the tolerance, which signals an epsilon at or below the smallest
    achievable risk), then bisected. Termination requires both the risk
    residual and the complementary-slackness product mu * |risk - epsilon|
    to fall below tol * max(1, epsilon), so the returned certificate
    satisfies the KKT conditions to that accuracy.
    """
    if not epsilon > 0.0:
        raise InvalidParameter(f"epsilon must be positive, got {epsilon}")
    if not tol > 0.0:
        raise InvalidParameter(f"tol must be positive, got {tol}")
    if not mu_cap > 0.0:
        raise InvalidParameter(f"mu_cap must be positive, got {mu_cap}")
    if integ is None:
        integ = OuterIntegrator(mode="discrete_exact") if isinstance(model, DiscreteModel) \
            else OuterIntegrator(mode="monte_carlo", seed=0)
    outer = _OuterSet(model, integ, quad or QuadratureConfig(), threads)

    scale = max(1.0, epsilon)
    risk0, _ = outer.expected_risk(0.0)
    if risk0 <= epsilon:
        return _report(outer, 0.0, epsilon)

    lo, lo_risk = 0.0, risk0
    hi = min(1.0, mu_cap)
    while True:
        hi_risk, _ = outer.expected_risk(hi)
        if hi_risk <= epsilon:
            break
        if hi >= mu_cap:
            raise MultiplierCapExceeded(
                f"expected risk {hi_risk:.6g} still exceeds epsilon {epsilon:.6g} "
                f"at the multiplier cap {mu_cap:.6g}"
            )
        lo, lo_risk = hi, hi_risk
        hi = min(2.0 * hi, mu_cap)

    mu, risk = hi, hi_risk
    for _ in range(300):
        if abs(risk - epsilon) <= tol * scale and mu * abs(risk - epsilon) <= tol * scale:
            break
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:  # interval exhausted at float resolution
            break
        mid_risk, _ = outer.expected_risk(mid)
        if mid_risk > epsilon:
            lo, lo_risk = mid, mid_risk
        else:
            hi, hi_risk = mid, mid_risk
        mu, risk = hi, hi_risk
    return _report(outer, mu, epsilon)
