"""Risk-aware Bayesian estimation under a variance-of-squared-error budget.

The estimator family minimizes expected squared error subject to a bound on
the expected predictive variance of the squared error. Each observation
admits a closed-form solution driven by five posterior moments; this
package computes those moments by adaptive quadrature (or exact enumeration
for discrete models), solves for the constraint multiplier by bisection
with a numerical KKT certificate, and cross-checks everything against
brute-force oracles.
"""

from .errors import (
    GridTooCoarse,
    InvalidParameter,
    MultiplierCapExceeded,
    NegativeMu,
    NegativeRisk,
    QuadratureNotConverged,
    RiskMmseError,
    UnknownKind,
    UnsupportedKind,
    ZeroPosteriorMass,
)
from .models import (
    CommFadingModel,
    DiscreteModel,
    ExpStateNoiseModel,
    GaussianLinearModel,
    JointSample,
    ModelSpec,
    build_model,
    joint_density,
    load_model,
    sample_joint,
)
from .posterior import (
    ALL,
    PosteriorMoments,
    QuadratureConfig,
    conditional_median,
    conditional_var_of_sq_error,
    posterior_moments,
)
from .estimator import (
    RiskAwareSolution,
    SteinDiagnostic,
    conditional_mse,
    conditional_risk,
    mmse_estimate,
    risk_aware_estimate,
    risk_aware_solution,
    risk_bias,
    stein_diagnostic,
)
from .dual import (
    KktReport,
    OuterIntegrator,
    dual_value,
    expected_mse,
    expected_risk,
    solve_mu,
)
from .experiments import (
    ProfilePoint,
    SweepRow,
    default_mu_grid,
    posterior_profile,
    sweep_mu,
    write_csv,
)
from .oracle import (
    OracleConfig,
    desk_fixtures,
    discrete_dual_oracle,
    lagrangian_bruteforce,
)
from .cli import run_cli

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "RiskMmseError",
    "UnknownKind",
    "InvalidParameter",
    "UnsupportedKind",
    "ZeroPosteriorMass",
    "QuadratureNotConverged",
    "NegativeMu",
    "NegativeRisk",
    "MultiplierCapExceeded",
    "GridTooCoarse",
    # models
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
    # posterior
    "ALL",
    "QuadratureConfig",
    "PosteriorMoments",
    "posterior_moments",
    "conditional_median",
    "conditional_var_of_sq_error",
    # estimator
    "RiskAwareSolution",
    "SteinDiagnostic",
    "risk_aware_estimate",
    "risk_aware_solution",
    "mmse_estimate",
    "conditional_mse",
    "conditional_risk",
    "risk_bias",
    "stein_diagnostic",
    # dual
    "OuterIntegrator",
    "KktReport",
    "expected_risk",
    "expected_mse",
    "dual_value",
    "solve_mu",
    # experiments
    "SweepRow",
    "ProfilePoint",
    "default_mu_grid",
    "sweep_mu",
    "posterior_profile",
    "write_csv",
    # oracle
    "OracleConfig",
    "lagrangian_bruteforce",
    "discrete_dual_oracle",
    "desk_fixtures",
    # cli
    "run_cli",
]
