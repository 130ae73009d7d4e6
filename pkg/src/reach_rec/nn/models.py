"""LSTM classifier and MLP baseline in plain numpy (float64).

Parameters live in one flat vector; named blocks are reshaped views into it,
so optimizers work on a single array and serialization works per block.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..data import FrameLabel
from ..features import FEATURE_DIM

N_CLASSES = len(FrameLabel)
FEATURE_NAMES = ("d_norm", "delta_d", "iou")


@dataclass(frozen=True)
class LstmConfig:
    input_dim: int = FEATURE_DIM
    hidden_dim: int = 15
    n_classes: int = N_CLASSES
    window: int = 2

    kind = "babynet-lstm"

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "n_classes", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"LstmConfig.{name} must be positive")

    def shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        h, d, c = self.hidden_dim, self.input_dim, self.n_classes
        return [
            ("w_ih", (4 * h, d)),
            ("w_hh", (4 * h, h)),
            ("b", (4 * h,)),
            ("w_out", (c, h)),
            ("b_out", (c,)),
        ]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim,
                "n_classes": self.n_classes, "window": self.window}


@dataclass(frozen=True)
class MlpConfig:
    """Feed-forward baseline on the current frame only.

    ``widths`` lists input, three hidden and output sizes (four weight layers).
    """

    widths: Tuple[int, ...] = (2, 6, 8, 5, 4)
    inputs: Tuple[str, ...] = ("d_norm", "iou")
    window: int = 1

    kind = "mlp-baseline"

    def __post_init__(self):
        if len(self.widths) != 5:
            raise ValueError(f"MLP needs 5 layer widths (four weight layers), got {self.widths}")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"MLP layer widths must be positive, got {self.widths}")
        if len(self.inputs) != self.widths[0]:
            raise ValueError(f"{len(self.inputs)} input features for input width {self.widths[0]}")
        unknown = set(self.inputs) - set(FEATURE_NAMES)
        if unknown:
            raise ValueError(f"unknown MLP input features {sorted(unknown)}")
        if self.window < 1:
            raise ValueError("MlpConfig.window must be positive")

    @property
    def n_classes(self) -> int:
        return self.widths[-1]

    @property
    def feature_index(self) -> List[int]:
        return [FEATURE_NAMES.index(name) for name in self.inputs]

    def shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        out = []
        for k, (a, b) in enumerate(zip(self.widths, self.widths[1:]), start=1):
            out.append((f"w{k}", (b, a)))
            out.append((f"b{k}", (b,)))
        return out

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "inputs": list(self.inputs), "window": self.window}


ModelConfig = Union[LstmConfig, MlpConfig]


def count_params(cfg: ModelConfig) -> int:
    """Trainable scalar count; 4h(h+in+1) + hc + c for the LSTM."""
    if isinstance(cfg, LstmConfig):
        h, d, c = cfg.hidden_dim, cfg.input_dim, cfg.n_classes
        return 4 * h * (h + d + 1) + h * c + c
    return sum(a * b + b for a, b in zip(cfg.widths, cfg.widths[1:]))


@lru_cache(maxsize=None)
def _layout(cfg: ModelConfig) -> Tuple[Tuple[str, slice, Tuple[int, ...]], ...]:
    out, pos = [], 0
    for name, shape in cfg.shapes():
        size = int(np.prod(shape))
        out.append((name, slice(pos, pos + size), shape))
        pos += size
    return tuple(out)


class ModelParams:
    """Flat parameter vector plus named views for ``cfg``'s blocks."""

    def __init__(self, cfg: ModelConfig, flat: Optional[np.ndarray] = None):
        self.cfg = cfg
        n = count_params(cfg)
        if flat is None:
            flat = np.zeros(n)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {flat.shape}")
        self.flat = flat
        self.blocks: Dict[str, np.ndarray] = {
            name: flat[sl].reshape(shape) for name, sl, shape in _layout(cfg)
        }

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def __len__(self):
        return self.flat.size

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, self.flat.copy())

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.cfg)

    def block_slices(self) -> Dict[str, slice]:
        return {name: sl for name, sl, _ in _layout(self.cfg)}

    def __eq__(self, other):
        return (isinstance(other, ModelParams) and self.cfg == other.cfg
                and np.array_equal(self.flat, other.flat))

    def __repr__(self):
        return f"ModelParams({self.cfg}, n={self.flat.size})"


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform weights; LSTM forget-gate bias starts at 1, other biases at 0."""
    rng = np.random.default_rng(seed)
    params = ModelParams(cfg)
    if isinstance(cfg, LstmConfig):
        bound = np.sqrt(1.0 / cfg.hidden_dim)
        for name in ("w_ih", "w_hh", "w_out"):
            blk = params[name]
            blk[...] = rng.uniform(-bound, bound, size=blk.shape)
        h = cfg.hidden_dim
        params["b"][h : 2 * h] = 1.0
    else:
        for k, fan_in in enumerate(cfg.widths[:-1], start=1):
            blk = params[f"w{k}"]
            bound = np.sqrt(1.0 / fan_in)
            blk[...] = rng.uniform(-bound, bound, size=blk.shape)
    return params


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _as_batch(windows, cfg: ModelConfig) -> np.ndarray:
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"windows must have shape (T, dim) or (B, T, dim), got {x.shape}")
    dim = cfg.input_dim if isinstance(cfg, LstmConfig) else FEATURE_DIM
    if x.shape[2] != dim:
        raise ValueError(f"feature dimension {x.shape[2]} does not match model input {dim}")
    if x.shape[1] != cfg.window:
        raise ValueError(f"window length {x.shape[1]} does not match model window {cfg.window}")
    return x


def _lstm_forward(params: ModelParams, x: np.ndarray, h0=None, c0=None):
    cfg = params.cfg
    hd = cfg.hidden_dim
    w_ih, w_hh, b = params["w_ih"], params["w_hh"], params["b"]
    batch, steps, _ = x.shape
    h = np.zeros((batch, hd)) if h0 is None else np.array(h0, dtype=np.float64).reshape(batch, hd)
    c = np.zeros((batch, hd)) if c0 is None else np.array(c0, dtype=np.float64).reshape(batch, hd)
    cache = []
    for t in range(steps):
        z = x[:, t] @ w_ih.T + h @ w_hh.T + b
        s = _sigmoid(z)
        i, f, o = s[:, :hd], s[:, hd : 2 * hd], s[:, 3 * hd :]
        g = np.tanh(z[:, 2 * hd : 3 * hd])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((x[:, t], h, c, i, f, g, o, tc))
        h, c = h_new, c_new
    logits = h @ params["w_out"].T + params["b_out"]
    return logits, (h, c), cache


def _mlp_forward(params: ModelParams, x: np.ndarray):
    cfg = params.cfg
    a = x[:, -1, cfg.feature_index]
    acts = [a]
    n_layers = len(cfg.widths) - 1
    for k in range(1, n_layers + 1):
        z = a @ params[f"w{k}"].T + params[f"b{k}"]
        a = np.tanh(z) if k < n_layers else z
        acts.append(a)
    return a, acts


def forward(params: ModelParams, window, state=None):
    """Logits for one window (T, dim) or a batch (B, T, dim).

    Returns ``(logits, (h, c))``; the MLP returns ``None`` as state. The
    prediction belongs to the last frame of the window.
    """
    x = _as_batch(window, params.cfg)
    single = np.ndim(window) == 2
    if isinstance(params.cfg, LstmConfig):
        h0, c0 = (None, None) if state is None else state
        logits, (h, c), _ = _lstm_forward(params, x, h0, c0)
        if single:
            return logits[0], (h[0], c[0])
        return logits, (h, c)
    logits, _ = _mlp_forward(params, x)
    return (logits[0] if single else logits), None


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def loss(logits, target, class_weights=None) -> float:
    """Weighted cross entropy; averaged over the batch for 2-D logits."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    lp = log_softmax(np.atleast_2d(logits))
    w = np.ones(lp.shape[1]) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    per = -w[target] * lp[np.arange(target.size), target]
    return float(np.mean(per))


def backward(params: ModelParams, window, target, class_weights=None) -> Tuple[float, ModelParams]:
    """Loss and its exact gradient with respect to every parameter."""
    cfg = params.cfg
    x = _as_batch(window, cfg)
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    batch = x.shape[0]
    if target.shape != (batch,):
        raise ValueError(f"{target.size} targets for {batch} windows")
    w = np.ones(cfg.n_classes) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    grads = params.zeros_like()

    if isinstance(cfg, LstmConfig):
        logits, (h_last, _), cache = _lstm_forward(params, x)
    else:
        logits, acts = _mlp_forward(params, x)

    lp = log_softmax(logits)
    rows = np.arange(batch)
    sample_w = w[target]
    value = -float((sample_w * lp[rows, target]).sum()) / batch
    dlogits = np.exp(lp)
    dlogits[rows, target] -= 1.0
    dlogits *= (sample_w / batch)[:, None]

    if isinstance(cfg, LstmConfig):
        hd = cfg.hidden_dim
        w_hh = params["w_hh"]
        grads["w_out"][...] = dlogits.T @ h_last
        grads["b_out"][...] = dlogits.sum(0)
        dh = dlogits @ params["w_out"]
        dc = np.zeros_like(dh)
        g_ih, g_hh, g_b = grads["w_ih"], grads["w_hh"], grads["b"]
        dz = np.empty((batch, 4 * hd))
        for x_t, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
            dc = dc + dh * o * (1.0 - tc * tc)
            dz[:, :hd] = dc * g * i * (1.0 - i)
            dz[:, hd : 2 * hd] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * hd : 3 * hd] = dc * i * (1.0 - g * g)
            dz[:, 3 * hd :] = dh * tc * o * (1.0 - o)
            g_ih += dz.T @ x_t
            g_hh += dz.T @ h_prev
            g_b += dz.sum(0)
            dh = dz @ w_hh
            dc = dc * f
    else:
        n_layers = len(cfg.widths) - 1
        delta = dlogits
        for k in range(n_layers, 0, -1):
            grads[f"w{k}"][...] = delta.T @ acts[k - 1]
            grads[f"b{k}"][...] = delta.sum(axis=0)
            if k > 1:
                a = acts[k - 1]
                delta = (delta @ params[f"w{k}"]) * (1.0 - a * a)
    return value, grads
