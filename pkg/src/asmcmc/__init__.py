"""Active-subspace MCMC: subspace identification, marginal-likelihood estimators and samplers."""

from .core import DegenerateWeightsError, RngStream, normalize_log_weights
from .diagnostics import (
    ComparisonReport,
    mode_occupancy,
    posterior_mean_error,
    reference_posterior_mean,
    reference_posterior_moments,
    spectrum_report,
)
from .estimators import (
    ess,
    ess_vs_dimension_curve,
    estimate_expectation_single,
    estimate_expectation_weighted,
    is_marginal_likelihood,
    select_active_dimension,
)
from .models import (
    BananaModel,
    ConjugateGaussianModel,
    MixtureModel,
    PlaneModel,
    build_model,
    generate_dataset,
)
from .samplers import (
    ChainTrace,
    ProposalSpec,
    SmcConfig,
    adaptive_pilot,
    run_as_mh,
    run_as_mwg,
    run_as_mwpg,
    run_as_pmmh,
    run_as_pmmh_inverted,
    run_mh,
)
from .smc import run_conditional_smc, run_inactive_smc
from .subspace import (
    GaussianPriorFactorization,
    SubspaceSplit,
    estimate_gradient_matrix,
    factorize_gaussian_prior,
    split_from_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "BananaModel",
    "ChainTrace",
    "ComparisonReport",
    "ConjugateGaussianModel",
    "DegenerateWeightsError",
    "GaussianPriorFactorization",
    "MixtureModel",
    "PlaneModel",
    "ProposalSpec",
    "RngStream",
    "SmcConfig",
    "SubspaceSplit",
    "adaptive_pilot",
    "build_model",
    "ess",
    "ess_vs_dimension_curve",
    "estimate_expectation_single",
    "estimate_expectation_weighted",
    "estimate_gradient_matrix",
    "factorize_gaussian_prior",
    "generate_dataset",
    "is_marginal_likelihood",
    "mode_occupancy",
    "normalize_log_weights",
    "posterior_mean_error",
    "reference_posterior_mean",
    "reference_posterior_moments",
    "run_as_mh",
    "run_as_mwg",
    "run_as_mwpg",
    "run_as_pmmh",
    "run_as_pmmh_inverted",
    "run_conditional_smc",
    "run_inactive_smc",
    "run_mh",
    "select_active_dimension",
    "spectrum_report",
    "split_from_matrix",
]
