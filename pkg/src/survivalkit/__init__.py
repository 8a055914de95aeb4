"""survivalkit: censored time-to-event prediction toolkit.

Kaplan-Meier estimation, Cox proportional-hazards regression,
conditional-inference survival trees and forests, censoring-aware model
evaluation (integrated Brier score), a player-churn feature pipeline, and
synthetic data generators, with a batch CLI (``survivalkit --help``).
"""

from survivalkit.survival import (
    Observation,
    RiskTable,
    SurvivalCurve,
    SurvivalDataset,
    build_risk_table,
    kaplan_meier,
    logrank_scores,
    median_survival,
)
from survivalkit.cox import CoxConfig, CoxModel, cox_log_partial_likelihood, fit_cox, predict_cox_survival
from survivalkit.tree import TreeConfig, best_split, grow_tree, predict_tree, rank_association_test
from survivalkit.forest import (
    ForestConfig,
    SurvivalForest,
    fit_binary_forest,
    fit_forest,
    predict_binary,
    predict_forest_survival,
    predict_median_and_risk,
    variable_importance,
)
from survivalkit.evaluation import (
    bootstrap_cv_error,
    brier_curve,
    calibration_pairs,
    roc_auc,
    welch_t_test,
)

__version__ = "0.1.0"

__all__ = [
    "Observation",
    "RiskTable",
    "SurvivalCurve",
    "SurvivalDataset",
    "build_risk_table",
    "kaplan_meier",
    "logrank_scores",
    "median_survival",
    "CoxConfig",
    "CoxModel",
    "cox_log_partial_likelihood",
    "fit_cox",
    "predict_cox_survival",
    "TreeConfig",
    "best_split",
    "grow_tree",
    "predict_tree",
    "rank_association_test",
    "ForestConfig",
    "SurvivalForest",
    "fit_binary_forest",
    "fit_forest",
    "predict_binary",
    "predict_forest_survival",
    "predict_median_and_risk",
    "variable_importance",
    "bootstrap_cv_error",
    "brier_curve",
    "calibration_pairs",
    "roc_auc",
    "welch_t_test",
    "__version__",
]
