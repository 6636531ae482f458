"""Poverty-probability scorecards from household survey data.

Pipeline: survey-weighted elastic-net logistic regression (coordinate descent
inside IRLS, unpenalized region dummies), bootstrap selection of the 10 most
stable questions, nested cross-validation (inner lambda, outer alpha),
translation into an integer 0-100 scorecard with per-region score-to-
probability lookup tables, and an out-of-sample evaluation suite.
"""

__version__ = "0.1.0"

from .data import (
    DesignMatrix,
    HouseholdRecord,
    QuestionSpec,
    SurveyDataset,
    encode_design,
    load_dataset,
    load_schema,
    split_train_test,
)
from .errors import (
    ConfigError,
    MissingArtifactError,
    NumericalError,
    PovscoreError,
    SchemaError,
    ValidationError,
)
from .solver import (
    ElasticNetFit,
    LambdaPath,
    fit,
    fit_path,
    kkt_residual,
    lambda_max,
    loglik_contribution,
    objective,
    predict_probability,
)
from .crossval import CvCurve, FoldAssignment, cv_lambda, make_folds, outer_cv_alpha
from .selection import (
    SelectedQuestionSet,
    SelectionConfig,
    SelectionFrequencyTable,
    draw_subsample,
    replicate_active_set,
    select_top_questions,
    selection_frequencies,
)
from .scorecard import (
    LookupTable,
    Scorecard,
    build_lookup,
    build_scorecard,
    compute_smax,
    export_scorecard,
    import_scorecard,
    rebase,
    round_weights,
    score_household,
)
from .evaluation import (
    GroupSummary,
    PredictionSet,
    ThresholdReport,
    compare_full_model,
    consumption_deciles,
    group_quartiles,
    predict_test,
    threshold_errors,
    weighted_quantile,
)
from .synthetic import GroundTruth, SyntheticConfig, SyntheticQuestion, default_scenario, generate, oracle_rate
from .pipeline import RunConfig, parse_run_config, run

__all__ = [
    "ConfigError",
    "CvCurve",
    "DesignMatrix",
    "ElasticNetFit",
    "FoldAssignment",
    "GroundTruth",
    "GroupSummary",
    "HouseholdRecord",
    "LambdaPath",
    "LookupTable",
    "MissingArtifactError",
    "NumericalError",
    "PovscoreError",
    "PredictionSet",
    "QuestionSpec",
    "RunConfig",
    "Scorecard",
    "SchemaError",
    "SelectedQuestionSet",
    "SelectionConfig",
    "SelectionFrequencyTable",
    "SurveyDataset",
    "SyntheticConfig",
    "SyntheticQuestion",
    "ThresholdReport",
    "ValidationError",
    "build_lookup",
    "build_scorecard",
    "compare_full_model",
    "compute_smax",
    "consumption_deciles",
    "cv_lambda",
    "default_scenario",
    "draw_subsample",
    "encode_design",
    "export_scorecard",
    "fit",
    "fit_path",
    "generate",
    "group_quartiles",
    "import_scorecard",
    "kkt_residual",
    "lambda_max",
    "load_dataset",
    "load_schema",
    "loglik_contribution",
    "make_folds",
    "objective",
    "oracle_rate",
    "outer_cv_alpha",
    "parse_run_config",
    "predict_probability",
    "predict_test",
    "rebase",
    "replicate_active_set",
    "round_weights",
    "run",
    "score_household",
    "select_top_questions",
    "selection_frequencies",
    "split_train_test",
    "threshold_errors",
    "weighted_quantile",
]
