"""From-scratch sequence classifiers: the reach LSTM and the MLP baseline."""

from .models import (
    LstmConfig,
    MlpConfig,
    ModelParams,
    backward,
    count_params,
    forward,
    init_params,
    loss,
    softmax,
)
from .optim import AdamState, TrainHyper, adam_step
from .serialize import ModelFormatError, load_model, save_model
from .train import build_windows, inverse_frequency_weights, make_config, predict, sliding_windows, train

__all__ = [
    "AdamState",
    "LstmConfig",
    "MlpConfig",
    "ModelFormatError",
    "ModelParams",
    "TrainHyper",
    "adam_step",
    "backward",
    "build_windows",
    "count_params",
    "forward",
    "init_params",
    "inverse_frequency_weights",
    "load_model",
    "loss",
    "make_config",
    "predict",
    "save_model",
    "sliding_windows",
    "softmax",
    "train",
]
