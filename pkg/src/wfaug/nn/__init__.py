from .layers import Conv1D, Dense, GlobalAvgPool, MaxPool2, ReLU
from .model import (
    CheckpointError,
    ConvBlock,
    Model,
    ModelConfig,
    cross_entropy,
    decide,
    default_model_config,
    load_checkpoint,
    predict,
    save_checkpoint,
    softmax,
)
from .optim import Adam, SgdMomentum, make_optimizer
from .training import (
    HistoryRow,
    TrainConfig,
    TrainingDiverged,
    dataset_accuracy,
    train,
    write_history,
)

__all__ = [
    "Adam", "CheckpointError", "Conv1D", "ConvBlock", "Dense",
    "GlobalAvgPool", "HistoryRow", "MaxPool2", "Model", "ModelConfig",
    "ReLU", "SgdMomentum", "TrainConfig", "TrainingDiverged",
    "cross_entropy", "dataset_accuracy", "decide", "default_model_config",
    "load_checkpoint", "make_optimizer", "predict", "save_checkpoint",
    "softmax", "train", "write_history",
]
