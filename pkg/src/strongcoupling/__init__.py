"""Strong couplings of the simple random walk with Gaussian paths.

The package builds, constructively and at desk scale, the chain of objects
behind logarithmic-accuracy walk/Brownian couplings: Stein coefficients and
their defining identity, exact conditional laws of the pinned walk, monotone
quantile couplings for one step, a recursive (pinned walk, Gaussian bridge)
construction, an infinite-horizon block coupling, and a Monte-Carlo harness
that checks every quantitative claim against independent oracles.
"""

from .core import (
    CouplingReport,
    CovarianceKind,
    DomainError,
    EstimationError,
    GaussianPath,
    PinnedCoupling,
    RandomSource,
    WalkPath,
    normal_cdf,
    split_rng,
    standard_normal_quantile,
)
from .stein import (
    DensitySpec,
    SteinFunction,
    autocorr_coefficient,
    discrete_identity_check,
    permutation_coefficient,
    smoothed_srw_coefficient,
    stein_h,
    stein_identity_residual,
    triangular_density,
    truncated_normal_density,
    uniform_density,
)
from .onestep import (
    ConditionalWalkLaw,
    CoupledPair,
    conditional_law,
    exp_moment_estimate,
    quantile_couple_binomial,
    quantile_couple_conditional,
)
from .recursion import (
    BlockSchedule,
    BridgeCouplingConfig,
    max_deviation,
    sample_infinite_coupling,
    sample_pinned_coupling,
    sample_walk_coupling,
)
from .verify import (
    ExperimentPlan,
    GrowthFit,
    estimate_exp_max_moment,
    run_deviation_experiment,
    skorokhod_couple,
)

__version__ = "0.1.0"

__all__ = [
    "BlockSchedule",
    "BridgeCouplingConfig",
    "ConditionalWalkLaw",
    "CoupledPair",
    "CouplingReport",
    "CovarianceKind",
    "DensitySpec",
    "DomainError",
    "EstimationError",
    "ExperimentPlan",
    "GaussianPath",
    "GrowthFit",
    "PinnedCoupling",
    "RandomSource",
    "SteinFunction",
    "WalkPath",
    "autocorr_coefficient",
    "conditional_law",
    "discrete_identity_check",
    "estimate_exp_max_moment",
    "exp_moment_estimate",
    "max_deviation",
    "normal_cdf",
    "permutation_coefficient",
    "quantile_couple_binomial",
    "quantile_couple_conditional",
    "run_deviation_experiment",
    "sample_infinite_coupling",
    "sample_pinned_coupling",
    "sample_walk_coupling",
    "skorokhod_couple",
    "smoothed_srw_coefficient",
    "split_rng",
    "stein_h",
    "stein_identity_residual",
    "triangular_density",
    "truncated_normal_density",
    "uniform_density",
]
