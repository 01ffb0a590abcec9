"""Prediction-centric uncertainty quantification.

Fits a mixing distribution over the parameters of a deterministic model
so that the implied mixture of predictive distributions matches the
data, instead of conditioning on any single parameter being correct.
The data fit is a squared kernel discrepancy, regularised towards a
reference measure, and the minimiser is approximated by an interacting
particle system.  Standard Bayes and a discrepancy-based Gibbs
posterior are included as baselines, together with presets for a
location toy, a predator-prey system, and a kinase signalling cascade.
"""
from .data import Dataset
from .dynamics import (
    ERK_CONSERVED_GROUPS,
    ERK_INIT,
    ERK_RATES,
    ERK_STEP,
    LV_STEP,
    OdeSystem,
    SdeSystem,
    Trajectory,
    conserved_totals,
    erk_system,
    integrate,
    lotka_volterra,
    simulate_sde,
)
from .errors import (
    ConfigError,
    DivergenceError,
    FixedPointError,
    IntegrationError,
    ModelEvaluationError,
    PcuqError,
    TuningWarning,
)
from .experiments import (
    CalibrationResult,
    CoverageMetrics,
    PcuqResult,
    PredictiveSummary,
    Scenario,
    calibrate_lambda,
    coverage_metrics,
    fit_bayes,
    fit_mmd_bayes,
    fit_pcuq,
    generate_dataset,
    get_scenario,
    list_scenarios,
    predictive_summary,
    scenario_predictive,
    true_trajectory,
)
from .flow import FlowResult, drift, run_flow
from .kernels import (
    SteinKernel,
    embed_double,
    embed_double_grad1,
    embed_double_mc,
    embed_single,
    embed_single_grad,
    embed_single_mc,
    gauss_kernel,
)
from .mcmc import (
    MalaResult,
    bayes_target,
    joint_particle_target,
    mala,
    mmd_bayes_target,
    tune_step,
)
from .models import (
    CallableMap,
    GaussianObsModel,
    GaussianPrior,
    LocationMap,
    OdeMap,
    ParamTransform,
)
from .oracle import FixedPointResult, GridMeasure, potential, solve_fixed_point

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "PcuqError",
    "ConfigError",
    "DivergenceError",
    "FixedPointError",
    "IntegrationError",
    "ModelEvaluationError",
    "TuningWarning",
    "ParamTransform",
    "LocationMap",
    "CallableMap",
    "OdeMap",
    "GaussianObsModel",
    "GaussianPrior",
    "Trajectory",
    "OdeSystem",
    "SdeSystem",
    "integrate",
    "simulate_sde",
    "lotka_volterra",
    "erk_system",
    "conserved_totals",
    "LV_STEP",
    "ERK_STEP",
    "ERK_RATES",
    "ERK_INIT",
    "ERK_CONSERVED_GROUPS",
    "gauss_kernel",
    "embed_single",
    "embed_single_grad",
    "embed_double",
    "embed_double_grad1",
    "embed_single_mc",
    "embed_double_mc",
    "SteinKernel",
    "FlowResult",
    "drift",
    "run_flow",
    "MalaResult",
    "mala",
    "tune_step",
    "bayes_target",
    "mmd_bayes_target",
    "joint_particle_target",
    "GridMeasure",
    "FixedPointResult",
    "potential",
    "solve_fixed_point",
    "Scenario",
    "PredictiveSummary",
    "CalibrationResult",
    "CoverageMetrics",
    "PcuqResult",
    "get_scenario",
    "list_scenarios",
    "generate_dataset",
    "true_trajectory",
    "fit_bayes",
    "fit_mmd_bayes",
    "fit_pcuq",
    "calibrate_lambda",
    "predictive_summary",
    "scenario_predictive",
    "coverage_metrics",
    "__version__",
]
