"""model.json reading and writing.

Numbers are written with Python's shortest round-trip float repr, so
save -> load reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
from typing import Any, Dict, Optional

import numpy as np

from .models import LstmConfig, MlpConfig, ModelConfig, ModelParams, count_params

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def save_model(params: ModelParams, cfg: Optional[ModelConfig] = None,
               meta: Optional[Dict[str, Any]] = None) -> bytes:
    cfg = cfg or params.cfg
    if cfg != params.cfg:
        raise ModelFormatError("config does not match the parameters' config")
    if not np.all(np.isfinite(params.flat)):
        raise ModelFormatError("refusing to save non-finite parameters")
    doc: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "kind": cfg.kind,
        "config": cfg.to_dict(),
        "n_params": count_params(cfg),
    }
    if isinstance(cfg, LstmConfig):
        doc["gate_order"] = "ifgo"
        for name, _ in cfg.shapes():
            doc[name] = params[name].tolist()
    else:
        doc["layers"] = [
            {"w": params[f"w{k}"].tolist(), "b": params[f"b{k}"].tolist()}
            for k in range(1, len(cfg.widths))
        ]
    if meta:
        doc["meta"] = meta
    return (json.dumps(doc, sort_keys=False, separators=(",", ":")) + "\n").encode("utf-8")


def _block(doc, name, shape):
    try:
        arr = np.asarray(doc[name], dtype=np.float64)
    except KeyError:
        raise ModelFormatError(f"missing parameter block {name!r}") from None
    except (TypeError, ValueError):
        raise ModelFormatError(f"parameter block {name!r} is not a numeric array") from None
    if arr.shape != tuple(shape):
        raise ModelFormatError(f"parameter block {name!r} has shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"parameter block {name!r} contains non-finite values")
    return arr


def _config_from_doc(doc) -> ModelConfig:
    kind = doc.get("kind")
    raw = doc.get("config")
    if not isinstance(raw, dict):
        raise ModelFormatError("missing config object")
    try:
        if kind == LstmConfig.kind:
            if doc.get("gate_order", "ifgo") != "ifgo":
                raise ModelFormatError(f"unsupported gate order {doc.get('gate_order')!r}")
            return LstmConfig(**{k: int(v) for k, v in raw.items()})
        if kind == MlpConfig.kind:
            return MlpConfig(widths=tuple(int(w) for w in raw["widths"]),
                             inputs=tuple(raw.get("inputs", MlpConfig.inputs)),
                             window=int(raw.get("window", 1)))
    except (TypeError, KeyError, ValueError) as exc:
        raise ModelFormatError(f"invalid config: {exc}") from None
    raise ModelFormatError(f"unknown model kind {kind!r}")


def load_model(data: bytes, with_meta: bool = False):
    """Parse model.json bytes into ``(params, cfg)`` (plus ``meta`` if asked)."""
    try:
        doc = json.loads(data.decode("utf-8") if isinstance(data, bytes) else data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})")
    cfg = _config_from_doc(doc)
    params = ModelParams(cfg)
    if isinstance(cfg, LstmConfig):
        for name, shape in cfg.shapes():
            params[name][...] = _block(doc, name, shape)
    else:
        layers = doc.get("layers")
        if not isinstance(layers, list) or len(layers) != len(cfg.widths) - 1:
            raise ModelFormatError(f"expected {len(cfg.widths) - 1} MLP layers")
        for k, layer in enumerate(layers, start=1):
            params[f"w{k}"][...] = _block(layer, "w", params[f"w{k}"].shape)
            params[f"b{k}"][...] = _block(layer, "b", params[f"b{k}"].shape)
    declared = doc.get("n_params")
    if declared is not None and declared != len(params):
        raise ModelFormatError(f"file declares {declared} parameters, config implies {len(params)}")
    if with_meta:
        return params, cfg, doc.get("meta", {})
    return params, cfg
