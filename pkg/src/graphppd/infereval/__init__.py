from .inference import (
    ContextPool,
    mc_predict,
    mc_predict_embedding,
    mc_predict_many,
    point_prediction,
    uncertainty,
)
from .metrics import accuracy, brier, class1_scores, ece, mae, nll, roc_auc
from .report import EvalReport, MetricTaskMismatch, check_metrics, evaluate
from .selective import DEFAULT_FRACTIONS, n_reviewed, review_order, selective_curve

__all__ = [
    "DEFAULT_FRACTIONS", "ContextPool", "EvalReport", "MetricTaskMismatch", "accuracy", "brier",
    "check_metrics", "class1_scores", "ece", "evaluate", "mae", "mc_predict", "mc_predict_embedding",
    "mc_predict_many", "n_reviewed", "nll", "point_prediction", "review_order", "roc_auc",
    "selective_curve", "uncertainty",
]
