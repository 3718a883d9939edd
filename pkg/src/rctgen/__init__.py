"""Generalizing randomized trial effects to incomplete target populations."""

from .amputation import AmputationSpec, ampute
from .data import (
    EstimateReport,
    MaskedMatrix,
    StackedSample,
    TargetSample,
    TrialSample,
    complete_cases,
    stack,
)
from .dgp import ATE_LINEAR, ATE_NONLINEAR, SimulationConfig, simulate
from .em import EmGlmModel, MvnModel, fit_em_glm, fit_mvn_em, predict_em, predict_em_matrix
from .errors import (
    ConvergenceError,
    DegenerateSampleError,
    InfeasibleCalibrationError,
    NumericalError,
    PoolExhaustedError,
    RctgenError,
    SchemaError,
    SpecError,
    UnsupportedProportionError,
)
from .estimators import (
    MethodSpec,
    aipsw,
    calibration_weights,
    conditional_outcome,
    cw_estimate,
    diff_in_means,
    estimate,
    estimate_density_ratio,
    ipsw,
)
from .forest import MiaForest, MiaForestParams, best_mia_split, fit_mia_forest
from .glm import GlmModel, fit_glm
from .harness import (
    BiasSummary,
    GridConfig,
    ReplicationResult,
    Scenario,
    bootstrap_ci,
    load_grid_config,
    overlap_diagnostics,
    preset_grid,
    run_grid,
    summarize_bias,
)
from .imputation import ImputationSet, PooledEstimate, mice_impute, multi_impute, rubin_pool
from .io import dump_target_csv, dump_trial_csv, load_target_csv, load_trial_csv

__version__ = "0.1.0"
