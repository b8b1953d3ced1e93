"""Test-time-augmented split conformal prediction over precomputed logits."""

__version__ = "0.1.0"

from .core import LogitTensor, RngState, empirical_quantile, rank_of_label, softmax
from .scores import ScoreConfig, ScoreKind, aps_score, raps_score, score_all_classes
from .calibrator import (
    FittedPredictor,
    PredictionSet,
    calibrate,
    fit_predictor,
    predict_set,
    predict_sets,
    predictor_from_document,
    predictor_to_document,
    tune_raps,
)
from .tta import (
    AugWeights,
    TrainConfig,
    TtaSplit,
    aggregate,
    split_validation,
    train_weights,
    tta_average,
)
from .evaluation import (
    EvalReport,
    SscvBins,
    coverage,
    optimal_top_k,
    paired_t_test,
    pearson_r,
    rank_shift_bins,
    sscv,
)
from .synth import SynthConfig, TtaMode, coverage_trial, generate
from .io import LogitFileHeader, read_header, read_tensor, write_tensor
from .harness import ExperimentPlan, Method, analyze, run_experiment, simulate

__all__ = [
    "LogitTensor",
    "RngState",
    "softmax",
    "empirical_quantile",
    "rank_of_label",
    "ScoreConfig",
    "ScoreKind",
    "aps_score",
    "raps_score",
    "score_all_classes",
    "FittedPredictor",
    "PredictionSet",
    "calibrate",
    "fit_predictor",
    "predict_set",
    "predict_sets",
    "tune_raps",
    "predictor_to_document",
    "predictor_from_document",
    "AugWeights",
    "TrainConfig",
    "TtaSplit",
    "aggregate",
    "tta_average",
    "split_validation",
    "train_weights",
    "EvalReport",
    "SscvBins",
    "coverage",
    "sscv",
    "optimal_top_k",
    "rank_shift_bins",
    "pearson_r",
    "paired_t_test",
    "SynthConfig",
    "TtaMode",
    "generate",
    "coverage_trial",
    "LogitFileHeader",
    "write_tensor",
    "read_tensor",
    "read_header",
    "ExperimentPlan",
    "Method",
    "run_experiment",
    "simulate",
    "analyze",
]
