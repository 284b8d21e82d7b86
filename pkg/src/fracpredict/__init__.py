"""Prediction of fractional processes from discrete observations.

Exact Gaussian-conditioning predictors, continuous-observation integral
predictors and trained ReLU networks for fractional Brownian motion,
fractional Ornstein-Uhlenbeck, fractional CIR and Wiener-type integrals.
"""
from .core import (
    CovarianceModel,
    GaussianConditional,
    HurstIndex,
    TimeGrid,
    build_cov_matrix,
    cholesky_factor,
    conditional_block,
    fbm_cov,
    fgn_autocov,
    gaussian_condition,
    truncated_normal_lower_second_moment,
    truncated_normal_upper_second_moment,
)
from .continuous import (
    ContinuousPredictorConfig,
    KernelVariant,
    predict_fbm_continuous,
    predict_fou_continuous,
    psi_fbm,
    psi_fou,
)
from .errors import (
    ConditioningError,
    ConfigError,
    DomainError,
    FracPredictError,
    GridIndexError,
    InfeasibleOrthant,
    NotPositiveDefinite,
    NumericalError,
    OrthantCaseRequired,
    SimulationError,
    TrainingDivergence,
    UnsupportedRegime,
)
from .exact import (
    ExactPredictor,
    build_fbm_predictor,
    build_fcir_predictor,
    build_fou_predictor,
    build_integral_predictor,
    fcir_predict_orthant_mc,
    fou_gamma_cov,
    theoretical_mse,
)
from .harness import (
    ExperimentConfig,
    PredictionReport,
    compare_exact_vs_nn,
    evaluate_me_mse,
    run_convergence_study,
    run_experiment,
    run_table_sweep,
)
from .kernels import BACKEND
from .nn import (
    MlpNetwork,
    TrainingConfig,
    build_fdemo,
    build_fmult,
    build_fsq,
    mlp_forward,
    mlp_gradient,
    mlp_init,
    train,
    truncate,
)
from .paths import (
    ObservationSet,
    PathBatch,
    read_binary,
    read_csv,
    sample_fbm,
    sample_fcir,
    sample_fou,
    sample_integral_process,
    sample_marginal,
    subsample,
    write_binary,
    write_csv,
)

__version__ = "0.1.0"
