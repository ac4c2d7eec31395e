"""Set-valued treatment-policy learning with coverage guarantees."""
from .conformal import (CalibrationResult, ScoreCdf, ScoreFunction, calibrate, check_fosd,
                        check_sosd, conformal_policy, conformal_quantile, conformal_set,
                        coverage_factor, empirical_cdf, estimate_rbar, inject_randomness,
                        margin_score)
from .core import (Dataset, FoldSplit, OracleTruth, Rng, SetValuedPolicy, TreatmentSet,
                   argmax_set, split_three_way)
from .dgp import SyntheticConfig, behavioral_policy, conditional_mean, generate
from .evaluation import (EvaluationReport, choose_lower, choose_uniform, coverage,
                         evaluate_cell, set_policy_value)
from .glb import GlbPolicy, fit_glb, glb_maxmin, glb_set
from .learners import (fit_knn_bootstrap_regressor, fit_linear_arm_regressor,
                       fit_q_learning_label_generator)

__all__ = [
    "CalibrationResult",
    "ScoreCdf",
    "ScoreFunction",
    "calibrate",
    "check_fosd",
    "check_sosd",
    "conformal_policy",
    "conformal_quantile",
    "conformal_set",
    "coverage_factor",
    "empirical_cdf",
    "estimate_rbar",
    "inject_randomness",
    "margin_score",
    "Dataset",
    "FoldSplit",
    "OracleTruth",
    "Rng",
    "SetValuedPolicy",
    "TreatmentSet",
    "argmax_set",
    "split_three_way",
    "SyntheticConfig",
    "behavioral_policy",
    "conditional_mean",
    "generate",
    "EvaluationReport",
    "choose_lower",
    "choose_uniform",
    "coverage",
    "evaluate_cell",
    "set_policy_value",
    "GlbPolicy",
    "fit_glb",
    "glb_maxmin",
    "glb_set",
    "fit_knn_bootstrap_regressor",
    "fit_linear_arm_regressor",
    "fit_q_learning_label_generator",
]

__version__ = "0.1.0"
