from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .models import ModelParams


@dataclass
class TrainHyper:
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 1
    class_weights: Optional[Tuple[float, ...]] = None
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        b1, b2 = self.betas
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ValueError(f"Adam betas must lie in (0, 1), got {self.betas}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.class_weights is not None and any(w < 0 for w in self.class_weights):
            raise ValueError("class weights must be non-negative")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat))


def adam_step(state: AdamState, params: ModelParams, grads: ModelParams, hyper: TrainHyper,
              t: Optional[int] = None) -> Tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state (inputs untouched)."""
    g = grads.flat
    if not np.all(np.isfinite(g)):
        bad = [name for name, sl in grads.block_slices().items() if not np.all(np.isfinite(g[sl]))]
        raise FloatingPointError(f"non-finite gradient in parameter block(s) {', '.join(bad)}")
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError(f"Adam step index must be >= 1, got {t}")
    b1, b2 = hyper.betas
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    flat = params.flat - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return ModelParams(params.cfg, flat), AdamState(m, v, t)
