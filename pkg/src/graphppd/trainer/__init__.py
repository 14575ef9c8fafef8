from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .loss import loss_tensor, nll_loss, nll_terms
from .optim import SGD, Adam, make_optimizer
from .sampling import iter_minibatches, iter_target_context, sample_context, sample_target_context
from .train import (
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    auto_ensemble_size,
    mc_dropout_predict,
    train,
    train_ensemble,
    train_plain,
)

__all__ = [
    "SGD", "Adam", "CheckpointError", "TrainConfig", "TrainResult", "TrainingDiverged",
    "auto_ensemble_size", "iter_minibatches", "iter_target_context", "load_checkpoint",
    "loss_tensor", "make_optimizer", "mc_dropout_predict", "nll_loss", "nll_terms",
    "sample_context", "sample_target_context", "save_checkpoint", "train", "train_ensemble",
    "train_plain",
]
