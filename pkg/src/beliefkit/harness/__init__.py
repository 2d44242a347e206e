from .metrics import (
    MetricsReport,
    cluster_to_label,
    evaluate,
    evaluate_r,
    predict_proba,
    roc_auc,
)
from .train import (
    LOSS_KINDS,
    EpochRecord,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    train,
    train_scene,
)

__all__ = [
    "MetricsReport",
    "predict_proba",
    "evaluate",
    "evaluate_r",
    "roc_auc",
    "cluster_to_label",
    "LOSS_KINDS",
    "TrainConfig",
    "EpochRecord",
    "TrainResult",
    "TrainingDiverged",
    "train",
    "train_scene",
]
