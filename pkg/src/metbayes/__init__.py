"""Bayesian variance-component updating and A-optimal trial allocation for
multi-environment trials."""

__version__ = "0.1.0"

from .data import (
    EnvironmentIndex,
    MetDataset,
    ObservationRow,
    WindowPlan,
    index_environments,
    load_met_csv,
    partition_windows,
    write_met_csv,
)
from .design_matrices import (
    EFFECT_NAMES,
    SCALAR_EFFECT_NAMES,
    EffectLayout,
    ModelMatrices,
    build_design,
    response_vector,
)
from .diagnostics import (
    DiagnosticThresholds,
    DiagnosticsReport,
    diagnose_columns,
    diagnose_sample,
    ess,
    geweke_z,
    r_hat,
)
from .distributions import (
    DegenerateSampleError,
    InvGammaParams,
    InvWishartParams,
    fit_inv_gamma_mle,
    fit_inv_wishart_mle,
    inv_gamma_logpdf,
    inv_wishart_logpdf,
    sample_inv_gamma,
    sample_inv_wishart,
    sample_mvn,
)
from .gibbs import (
    Chain,
    ChainError,
    ParameterState,
    PosteriorSample,
    PriorSet,
    SamplerConfig,
    cond_fixed_effects,
    cond_random_effect,
    cond_residual_env,
    cond_sigma_z,
    cond_variance_scalar,
    run_chain,
    run_chains,
    write_posterior_csv,
)
from .optimal_design import (
    ApproximateDesign,
    DesignComponents,
    DesignInputs,
    DesignResult,
    PosteriorDesignSummary,
    build_design_inputs,
    components_from_prior_means,
    default_mse_constant,
    draw_components,
    efficiency,
    evaluate_design,
    mse_trace,
    optimize_approximate_design,
    phi_a_multi_year,
    phi_a_single_year,
    posterior_design_summary,
    round_to_exact,
)
from .simulate import SimSpec, SimTruth, simulate_dataset
from .updating import (
    InitialPriorSpec,
    UpdatingResult,
    WindowResult,
    priors_from_posterior,
    run_bayesian_updating,
)
