"""Continuous-discrete Gaussian filtering and smoothing for non-linear
latent force models: GP priors as linear SDE blocks, augmented with
mechanistic dynamics, with cubature-based state inference and
marginal-likelihood parameter estimation."""

from .cdgauss import (
    DivergenceError,
    FilterResult,
    GaussianState,
    SmootherResult,
    bootstrap_pf,
    filter,
    log_marginal,
    predict,
    smooth,
    update,
)
from .estim import McmcChain, OptResult, ParamSpace, maximize, rw_metropolis
from .gp_sde import (
    LtiSde,
    MaternSpec,
    ResonatorSpec,
    matern_kernel,
    matern_to_sde,
    resonator_to_sde,
    stationary_covariance,
)
from .quad import CubatureRule, cubature_points, gauss_cross_cov, gauss_expect
from .ssm import (
    AugmentedModel,
    MeasurementModel,
    MechanisticModel,
    Trajectory,
    augment,
    initial_state,
    simulate,
)

__version__ = "0.1.0"
