"""Sliding-window datasets, the training loop and per-frame prediction."""

from __future__ import annotations

import logging
import warnings
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..data import FrameLabel
from ..features import FeatureStream
from .models import (
    LstmConfig,
    MlpConfig,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    init_params,
    log_softmax,
    softmax,
)
from .optim import AdamState, TrainHyper, adam_step

log = logging.getLogger(__name__)

WEIGHT_CLIP = (0.25, 8.0)
LabeledStream = Tuple[FeatureStream, Sequence[int]]


def make_config(kind: str, window: Optional[int] = None) -> ModelConfig:
    if kind in ("babynet", LstmConfig.kind):
        return LstmConfig() if window is None else LstmConfig(window=window)
    if kind in ("mlp", MlpConfig.kind):
        return MlpConfig() if window is None else MlpConfig(window=window)
    raise ValueError(f"unknown model kind {kind!r}")


def sliding_windows(features: np.ndarray, window: int) -> np.ndarray:
    """(n, dim) -> (n, window, dim); frames before the start repeat frame 0."""
    n = features.shape[0]
    idx = np.arange(n)[:, None] + np.arange(-window + 1, 1)[None, :]
    return features[np.clip(idx, 0, None)]


def build_windows(data: Sequence[LabeledStream], window: int) -> Tuple[np.ndarray, np.ndarray]:
    """Stack windows and targets of every valid frame in ``data``."""
    xs, ys = [], []
    for stream, labels in data:
        if len(labels) != len(stream):
            raise ValueError(f"{len(labels)} labels for a stream of {len(stream)} frames")
        if not len(stream):
            continue
        win = sliding_windows(stream.as_array(), window)
        mask = np.asarray(stream.valid, dtype=bool)
        xs.append(win[mask])
        ys.append(np.asarray(labels, dtype=np.int64)[mask])
    if not xs:
        return np.zeros((0, window, 3)), np.zeros(0, dtype=np.int64)
    return np.concatenate(xs), np.concatenate(ys)


def inverse_frequency_weights(targets: np.ndarray, n_classes: int = len(FrameLabel)) -> np.ndarray:
    """Class weights n / (k * count), clipped; classes with no samples get weight 1."""
    counts = np.bincount(targets, minlength=n_classes).astype(np.float64)
    weights = np.ones(n_classes)
    present = counts > 0
    if not present.all():
        missing = [FrameLabel(i).name for i in np.flatnonzero(~present)]
        warnings.warn(f"no training frames for class(es) {', '.join(missing)}; using weight 1",
                      stacklevel=2)
    weights[present] = np.clip(targets.size / (n_classes * counts[present]), *WEIGHT_CLIP)
    return weights


def _evaluate_windows(params: ModelParams, x: np.ndarray, y: np.ndarray,
                      class_weights: np.ndarray) -> Tuple[float, float]:
    if y.size == 0:
        return float("nan"), float("nan")
    logits, _ = forward(params, x)
    lp = log_softmax(logits)
    loss = float(np.mean(-class_weights[y] * lp[np.arange(y.size), y]))
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    return loss, acc


def train(
    kind: Union[str, ModelConfig],
    train_data: Sequence[LabeledStream],
    val_data: Sequence[LabeledStream],
    hyper: Optional[TrainHyper] = None,
    seed: Optional[int] = None,
) -> Tuple[ModelParams, List[Dict[str, float]]]:
    """Fit a model with Adam on weighted cross entropy.

    Returns the parameters of the epoch with the best validation frame
    accuracy (earliest on ties) and the per-epoch history.
    """
    hyper = hyper or TrainHyper()
    seed = hyper.seed if seed is None else seed
    cfg = make_config(kind) if isinstance(kind, str) else kind
    x_tr, y_tr = build_windows(train_data, cfg.window)
    x_va, y_va = build_windows(val_data, cfg.window)
    if y_tr.size == 0:
        raise ValueError("training split has no valid frames")
    if y_va.size == 0:
        raise ValueError("validation split has no valid frames")

    if hyper.class_weights is None:
        weights = inverse_frequency_weights(y_tr, cfg.n_classes)
    else:
        weights = np.asarray(hyper.class_weights, dtype=np.float64)
    log.info("training %s on %d windows (val %d), class weights %s",
             cfg.kind, y_tr.size, y_va.size, np.round(weights, 3).tolist())

    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    opt = AdamState.for_params(params)
    best, best_acc = params.copy(), -1.0
    history: List[Dict[str, float]] = []
    bs = hyper.batch_size

    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(y_tr.size)
        for start in range(0, order.size, bs):
            idx = order[start : start + bs]
            _, grads = backward(params, x_tr[idx], y_tr[idx], weights)
            params, opt = adam_step(opt, params, grads, hyper)
        tr_loss, tr_acc = _evaluate_windows(params, x_tr, y_tr, weights)
        va_loss, va_acc = _evaluate_windows(params, x_va, y_va, weights)
        history.append({"epoch": epoch, "train_loss": tr_loss, "train_accuracy": tr_acc,
                        "val_loss": va_loss, "val_accuracy": va_acc})
        log.info("epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f",
                 epoch, tr_loss, tr_acc, va_loss, va_acc)
        if va_acc > best_acc:
            best, best_acc = params.copy(), va_acc
    return best, history


def predict(params: ModelParams, stream: FeatureStream) -> np.ndarray:
    """Class probabilities for every frame of ``stream``, shape (n, 4)."""
    if not len(stream):
        return np.zeros((0, params.cfg.n_classes))
    win = sliding_windows(stream.as_array(), params.cfg.window)
    logits, _ = forward(params, win)
    return softmax(logits)
