"""Generative models: priors, likelihoods, joint densities, seeded sampling.

Four model kinds are supported:

``exp_state_noise``
    Scalar hidden state X ~ Exponential(rate 1/mean_x) observed through
    Y | X ~ Normal(X, noise_factor * X^2). The observation noise variance
    scales with the state, which is what makes the risk-aware estimate
    differ from the conditional mean.

``comm_fading``
    X = [z, h] with message z ~ Normal(0, var_z) and channel gain
    h ~ Rayleigh(rayleigh_scale), observed through Y = h*z + w with
    w ~ Normal(0, var_w). var_w = 0 selects the noiseless channel, in
    which case the posterior lives on the curve h*z = y.

``gaussian_linear``
    X ~ Normal(prior_mean, prior_cov), Y = obs_matrix @ X + w with
    w ~ Normal(0, noise_cov). Jointly Gaussian control model; its
    risk-aware estimate provably coincides with the conditional mean.

``discrete``
    Arbitrary finite joint table over support points x_i, y_j with
    probabilities p_ij. Used by the brute-force validation oracle.

Sampling uses counter-based per-index seeding (one Philox stream per
sample index), so sequences are bitwise reproducible for a fixed seed
no matter how or in what order samples are drawn.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, ClassVar, Mapping, Sequence

import numpy as np

from .errors import InvalidParameter, UnknownKind, UnsupportedKind

__all__ = [
    "ModelSpec",
    "ExpStateNoiseModel",
    "CommFadingModel",
    "GaussianLinearModel",
    "DiscreteModel",
    "JointSample",
    "build_model",
    "load_model",
    "joint_density",
    "sample_joint",
]

_LOG_2PI = math.log(2.0 * math.pi)
_KEY_MASK = (1 << 128) - 1


@dataclass(frozen=True, eq=False)
class JointSample:
    """One draw (x, y) from a joint model distribution."""

    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    """Base type for validated generative models.

    Concrete models expose ``kind``, ``state_dim`` (M) and ``obs_dim`` (N)
    plus kind-specific parameters. Instances are immutable and safe to
    share across threads.
    """

    kind: ClassVar[str] = "abstract"

    @property
    def state_dim(self) -> int:
        raise NotImplementedError

    @property
    def obs_dim(self) -> int:
        raise NotImplementedError

    def _sample_one(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


def _as_float(raw: Mapping[str, Any], key: str, default: float | None = None) -> float:
    if key not in raw:
        if default is None:
            raise InvalidParameter(f"missing parameter '{key}'")
        return float(default)
    try:
        return float(raw[key])
    except (TypeError, ValueError) as exc:
        raise InvalidParameter(f"parameter '{key}' is not a number: {raw[key]!r}") from exc


def _check_keys(raw: Mapping[str, Any], allowed: set[str]) -> None:
    extra = set(raw) - allowed - {"kind"}
    if extra:
        raise InvalidParameter(f"unrecognized parameters: {sorted(extra)}")


def _check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{name} contains non-finite entries")
    return arr


def _check_symmetric_psd(name: str, mat: np.ndarray) -> np.ndarray:
    """Validate symmetry and positive semidefiniteness; return symmetrized copy."""
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidParameter(f"{name} must be a square matrix, got shape {mat.shape}")
    _check_finite(name, mat)
    scale = 1.0 + float(np.abs(mat).max(initial=0.0))
    if float(np.abs(mat - mat.T).max(initial=0.0)) > 1e-12 * scale:
        raise InvalidParameter(f"{name} is not symmetric")
    sym = 0.5 * (mat + mat.T)
    eigmin = float(np.linalg.eigvalsh(sym).min())
    if eigmin < -1e-12 * scale:
        raise InvalidParameter(f"{name} is not positive semidefinite (eigmin={eigmin:.3e})")
    return sym


def _psd_factor(mat: np.ndarray) -> np.ndarray:
    """A factor L with L @ L.T = mat, valid for singular PSD matrices."""
    w, v = np.linalg.eigh(mat)
    return v * np.sqrt(np.clip(w, 0.0, None))


def _chol_logdet(name: str, mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor and log-determinant; density evaluation needs strict PD."""
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise InvalidParameter(f"{name} must be positive definite for density evaluation") from exc
    return chol, 2.0 * float(np.sum(np.log(np.diag(chol))))


def _gauss_logpdf_quadform(resid: np.ndarray, chol: np.ndarray, logdet: float) -> np.ndarray:
    """Log N(resid; 0, C) for rows of resid, given chol(C) and log det C."""
    z = np.linalg.solve(chol, resid.T)
    quad = np.sum(z * z, axis=0)
    k = resid.shape[1]
    return -0.5 * (k * _LOG_2PI + logdet + quad)


@dataclass(frozen=True)
class ExpStateNoiseModel(ModelSpec):
    """Exponential state observed in Gaussian noise with state-scaled variance."""

    mean_x: float
    noise_factor: float

    kind: ClassVar[str] = "exp_state_noise"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean_x) and self.mean_x > 0):
            raise InvalidParameter(f"mean_x must be positive, got {self.mean_x}")
        if not (math.isfinite(self.noise_factor) and self.noise_factor >= 0):
            raise InvalidParameter(f"noise_factor must be nonnegative, got {self.noise_factor}")

    @property
    def state_dim(self) -> int:
        return 1

    @property
    def obs_dim(self) -> int:
        return 1

    @property
    def rate(self) -> float:
        return 1.0 / self.mean_x

    def _log_joint(self, x: np.ndarray, y: float) -> np.ndarray:
        """Vectorized log prior(x) + log likelihood(y | x); -inf off support."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -np.inf)
        ok = x > 0
        if self.noise_factor == 0.0:
            raise UnsupportedKind("noise_factor = 0 has no joint density (Y = X exactly)")
        xs = x[ok]
        lp = math.log(self.rate) - self.rate * xs
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            var = self.noise_factor * xs * xs
            ll = -0.5 * (_LOG_2PI + np.log(var)) - (y - xs) ** 2 / (2.0 * var)
        # x beyond either float extreme of x^2 carries no posterior mass
        ll[~np.isfinite(var)] = -np.inf
        ll[var == 0.0] = -np.inf
        out[ok] = lp + ll
        return out

    def _sample_one(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        x = rng.exponential(scale=self.mean_x)
        y = x if self.noise_factor == 0.0 else rng.normal(x, math.sqrt(self.noise_factor) * x)
        return np.array([x]), np.array([y])


@dataclass(frozen=True)
class CommFadingModel(ModelSpec):
    """Gaussian message through a Rayleigh-fading channel, X = [z, h]."""

    var_z: float
    rayleigh_scale: float
    var_w: float

    kind: ClassVar[str] = "comm_fading"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.var_z) and self.var_z > 0):
            raise InvalidParameter(f"var_z must be positive, got {self.var_z}")
        if not (math.isfinite(self.rayleigh_scale) and self.rayleigh_scale > 0):
            raise InvalidParameter(f"rayleigh_scale must be positive, got {self.rayleigh_scale}")
        if not (math.isfinite(self.var_w) and self.var_w >= 0):
            raise InvalidParameter(f"var_w must be nonnegative, got {self.var_w}")

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def obs_dim(self) -> int:
        return 1

    def _log_prior_z(self, z: np.ndarray) -> np.ndarray:
        return -0.5 * (_LOG_2PI + math.log(self.var_z)) - z * z / (2.0 * self.var_z)

    def _log_prior_h(self, h: np.ndarray) -> np.ndarray:
        s2 = self.rayleigh_scale**2
        out = np.full(np.shape(h), -np.inf)
        ok = h > 0
        hs = h[ok]
        out[ok] = np.log(hs) - math.log(s2) - hs * hs / (2.0 * s2)
        return out

    def _log_joint(self, z: np.ndarray, h: np.ndarray, y: float) -> np.ndarray:
        if self.var_w == 0.0:
            raise UnsupportedKind("var_w = 0 has no 3-D joint density (Y = h*z exactly)")
        ll = -0.5 * (_LOG_2PI + math.log(self.var_w)) - (y - h * z) ** 2 / (2.0 * self.var_w)
        return self._log_prior_z(z) + self._log_prior_h(h) + ll

    def _log_manifold(self, h: np.ndarray, y: float) -> np.ndarray:
        """Noiseless channel: posterior over h on the curve z = y/h.

        The unnormalized density is prior_z(y/h) * prior_h(h) / h; the 1/h
        factor is the co-area correction for slicing the (z, h) plane along
        {h*z = y}.
        """
        out = np.full(np.shape(h), -np.inf)
        ok = h > 0
        hs = h[ok]
        out[ok] = self._log_prior_z(y / hs) + self._log_prior_h(hs) - np.log(hs)
        return out

    def _sample_one(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        z = rng.normal(0.0, math.sqrt(self.var_z))
        h = rng.rayleigh(scale=self.rayleigh_scale)
        y = h * z
        if self.var_w > 0.0:
            y += rng.normal(0.0, math.sqrt(self.var_w))
        return np.array([z, h]), np.array([y])


@dataclass(frozen=True, eq=False)
class GaussianLinearModel(ModelSpec):
    """X ~ N(prior_mean, prior_cov) observed through Y = H @ X + noise."""

    prior_mean: np.ndarray
    prior_cov: np.ndarray
    obs_matrix: np.ndarray
    noise_cov: np.ndarray

    kind: ClassVar[str] = "gaussian_linear"

    def __post_init__(self) -> None:
        m0 = _check_finite("prior_mean", np.atleast_1d(np.asarray(self.prior_mean, dtype=float)))
        s0 = _check_symmetric_psd("prior_cov", np.atleast_2d(np.asarray(self.prior_cov, dtype=float)))
        h = _check_finite("obs_matrix", np.atleast_2d(np.asarray(self.obs_matrix, dtype=float)))
        r = _check_symmetric_psd("noise_cov", np.atleast_2d(np.asarray(self.noise_cov, dtype=float)))
        if s0.shape[0] != m0.shape[0]:
            raise InvalidParameter("prior_cov shape does not match prior_mean")
        if h.shape[1] != m0.shape[0]:
            raise InvalidParameter("obs_matrix column count does not match state_dim")
        if r.shape[0] != h.shape[0]:
            raise InvalidParameter("noise_cov shape does not match obs_matrix row count")
        for name, val in (("prior_mean", m0), ("prior_cov", s0), ("obs_matrix", h), ("noise_cov", r)):
            object.__setattr__(self, name, val)

    @property
    def state_dim(self) -> int:
        return self.prior_mean.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.obs_matrix.shape[0]

    @cached_property
    def _prior_factor(self) -> tuple[np.ndarray, float]:
        return _chol_logdet("prior_cov", self.prior_cov)

    @cached_property
    def _noise_factor(self) -> tuple[np.ndarray, float]:
        return _chol_logdet("noise_cov", self.noise_cov)

    @cached_property
    def _sampling_factors(self) -> tuple[np.ndarray, np.ndarray]:
        # PSD-safe factors: sampling works even for singular covariances.
        return _psd_factor(self.prior_cov), _psd_factor(self.noise_cov)

    def _log_joint(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vectorized over rows of x (shape (n, M)); y is one observation."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        chol0, logdet0 = self._prior_factor
        cholr, logdetr = self._noise_factor
        lp = _gauss_logpdf_quadform(x - self.prior_mean, chol0, logdet0)
        resid = y - x @ self.obs_matrix.T
        ll = _gauss_logpdf_quadform(resid, cholr, logdetr)
        return lp + ll

    def _sample_one(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        l0, lr = self._sampling_factors
        x = self.prior_mean + l0 @ rng.standard_normal(self.state_dim)
        y = self.obs_matrix @ x + lr @ rng.standard_normal(self.obs_dim)
        return x, y


@dataclass(frozen=True, eq=False)
class DiscreteModel(ModelSpec):
    """Finite joint table: support points x_i, y_j with probabilities p_ij."""

    x: np.ndarray  # (K, M) state support
    y: np.ndarray  # (L, N) observation support
    p: np.ndarray  # (K, L) joint probabilities

    kind: ClassVar[str] = "discrete"

    def __post_init__(self) -> None:
        # normalize both supports to 2-D (points, dim)
        xs = _as_support(self.x)
        ys = _as_support(self.y)
        _check_finite("x", xs)
        _check_finite("y", ys)
        ps = np.atleast_2d(np.asarray(self.p, dtype=float))
        if ps.shape != (xs.shape[0], ys.shape[0]):
            raise InvalidParameter(
                f"p must have shape ({xs.shape[0]}, {ys.shape[0]}), got {ps.shape}"
            )
        _check_finite("p", ps)
        if np.any(ps < 0):
            raise InvalidParameter("joint probabilities must be nonnegative")
        total = float(ps.sum())
        if abs(total - 1.0) > 1e-12:
            raise InvalidParameter(f"joint probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "y", ys)
        object.__setattr__(self, "p", ps)

    @property
    def state_dim(self) -> int:
        return self.x.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.y.shape[1]

    @cached_property
    def _flat_cumulative(self) -> np.ndarray:
        return np.cumsum(self.p.ravel())

    def marginal_y(self) -> np.ndarray:
        """Marginal probability of each observation support point."""
        return self.p.sum(axis=0)

    def _sample_one(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        u = rng.random()
        flat = int(np.searchsorted(self._flat_cumulative, u, side="right"))
        flat = min(flat, self.p.size - 1)
        i, j = divmod(flat, self.p.shape[1])
        return self.x[i].copy(), self.y[j].copy()


def _as_support(points: Any) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidParameter(f"support must be a list of points, got ndim={arr.ndim}")
    return arr


_KINDS = {
    "exp_state_noise": ExpStateNoiseModel,
    "comm_fading": CommFadingModel,
    "gaussian_linear": GaussianLinearModel,
    "discrete": DiscreteModel,
}


def build_model(spec: Mapping[str, Any]) -> ModelSpec:
    """Validate a raw config record and return the corresponding model.

    The record must carry a ``kind`` key naming one of the four model
    kinds; remaining keys are kind-specific parameters. Scenario presets:
    ``exp_state_noise`` defaults to mean_x=2, noise_factor=9 and
    ``comm_fading`` to var_z=2, rayleigh_scale=2, var_w=0.1, so an empty
    parameter set reproduces the two reference scenarios.

    Raises UnknownKind for an unrecognized kind and InvalidParameter for
    anything that fails validation.
    """
    if not isinstance(spec, Mapping):
        raise InvalidParameter(f"model config must be a mapping, got {type(spec).__name__}")
    if "kind" not in spec:
        raise InvalidParameter("model config is missing 'kind'")
    kind = spec["kind"]
    if kind not in _KINDS:
        raise UnknownKind(f"unknown model kind {kind!r}; expected one of {sorted(_KINDS)}")

    if kind == "exp_state_noise":
        _check_keys(spec, {"mean_x", "noise_factor"})
        return ExpStateNoiseModel(
            mean_x=_as_float(spec, "mean_x", 2.0),
            noise_factor=_as_float(spec, "noise_factor", 9.0),
        )
    if kind == "comm_fading":
        _check_keys(spec, {"var_z", "rayleigh_scale", "var_w"})
        return CommFadingModel(
            var_z=_as_float(spec, "var_z", 2.0),
            rayleigh_scale=_as_float(spec, "rayleigh_scale", 2.0),
            var_w=_as_float(spec, "var_w", 0.1),
        )
    if kind == "gaussian_linear":
        _check_keys(spec, {"prior_mean", "prior_cov", "obs_matrix", "noise_cov"})
        args = {}
        for key in ("prior_mean", "prior_cov", "obs_matrix", "noise_cov"):
            if key not in spec:
                raise InvalidParameter(f"missing parameter '{key}'")
            args[key] = _as_array(key, spec[key])
        return GaussianLinearModel(**args)
    # discrete
    _check_keys(spec, {"x", "y", "p"})
    args = {}
    for key in ("x", "y", "p"):
        if key not in spec:
            raise InvalidParameter(f"missing parameter '{key}'")
        args[key] = _as_array(key, spec[key])
    return DiscreteModel(**args)


def _as_array(name: str, raw: Any) -> np.ndarray:
    try:
        return np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidParameter(f"parameter '{name}' is not a numeric array: {exc}") from exc


def load_model(path: str | Path) -> ModelSpec:
    """Read a JSON model config file and build the model it describes."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidParameter(f"model file {path} is not valid JSON: {exc}") from exc
    return build_model(raw)


def joint_density(model: ModelSpec, x: Any, y: Any) -> float:
    """Evaluate prior(x) * likelihood(y | x) for a continuous model.

    Returns 0 outside the support. Discrete models carry their joint
    table instead and raise UnsupportedKind, as do the degenerate
    noiseless variants whose joint law has no density.
    """
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    if isinstance(model, DiscreteModel):
        raise UnsupportedKind("discrete models use the joint table, not a density")
    if xv.shape != (model.state_dim,) or yv.shape != (model.obs_dim,):
        raise InvalidParameter(
            f"expected x of length {model.state_dim} and y of length {model.obs_dim}"
        )
    if isinstance(model, ExpStateNoiseModel):
        logd = model._log_joint(xv, float(yv[0]))[0]
    elif isinstance(model, CommFadingModel):
        logd = model._log_joint(xv[:1], xv[1:], float(yv[0]))[0]
    elif isinstance(model, GaussianLinearModel):
        logd = model._log_joint(xv[None, :], yv)[0]
    else:
        raise UnsupportedKind(f"no density for model kind {model.kind!r}")
    return float(np.exp(logd))


def _index_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for one sample index (counter-based seeding)."""
    key = int(seed) & _KEY_MASK
    return np.random.Generator(np.random.Philox(key=key, counter=index << 128))


def sample_joint(model: ModelSpec, n: int, seed: int) -> list[JointSample]:
    """Draw n i.i.d. joint samples, bitwise reproducible for a fixed seed.

    Sample index i is generated from its own counter-offset stream, so the
    result does not depend on evaluation order or batching.
    """
    if n < 0:
        raise InvalidParameter(f"sample count must be nonnegative, got {n}")
    out = []
    for i in range(n):
        x, y = model._sample_one(_index_rng(seed, i))
        out.append(JointSample(x=x, y=y))
    return out


def _sample_arrays(model: ModelSpec, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """sample_joint stacked into (n, M) and (n, N) arrays."""
    samples = sample_joint(model, n, seed)
    if not samples:
        return np.empty((0, model.state_dim)), np.empty((0, model.obs_dim))
    return np.stack([s.x for s in samples]), np.stack([s.y for s in samples])
