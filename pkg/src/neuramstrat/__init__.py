"""Stratified Monte Carlo on a learned one-dimensional neural active manifold."""

from .baselines import (
    ActiveSubspaceMap,
    AsDirection,
    GaussianMap,
    as_direction,
    as_stratum_index,
    gaussian_map,
    gaussian_map_inverse,
    lhs_estimate,
    lhs_sample,
)
from .estimators import (
    Allocation,
    DegenerateLowFidelityError,
    EstimateResult,
    InfeasibleBudgetError,
    MfBudget,
    MultifidelityWarning,
    control_coefficients,
    mc_estimate,
    mfmc_allocation,
    mfmc_estimate,
    optimal_allocation_smc,
    proportional_allocation,
    smc_estimate,
    smfmc_allocation,
    smfmc_estimate,
    theoretical_variances,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    ReportRow,
    StageError,
    compare_command,
    derive_seed,
    repeat_harness,
    run_experiment,
    sweep_command,
)
from .models import (
    Component,
    DomainError,
    ModelSpec,
    ProductDistribution,
    TriangularCdf,
    analytic_linear_neuram,
    eval_model,
    exact_mean,
    get_model,
    quantile,
    sample_dist,
)
from .neuram import (
    Dataset,
    DegenerateLatentError,
    EmpiricalCdf,
    ManifoldMap,
    NeurAmModel,
    TrainConfig,
    TrainingError,
    TrainReport,
    build_cdf,
    cdf_eval,
    cdf_inverse,
    neuram_loss,
    reparameterize_lf,
    reparameterized_model,
    surrogate_eval,
    train_neuram,
)
from .nn import AdamState, GradientSet, Mlp, adam_step, mlp_backward, mlp_forward, mlp_init
from .stratify import (
    InsufficientSampleError,
    RejectionBudgetError,
    Stratification,
    StratumStats,
    SurrogatePool,
    heuristic_refine,
    optimal_split,
    sample_in_stratum,
    sample_strata,
    stratum_index,
    stratum_stats_surrogate,
    uniform_breakpoints,
)

__version__ = "0.1.0"
