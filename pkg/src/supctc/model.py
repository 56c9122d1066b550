"""Model bundle: encoder, recognition head, projection head, checkpointing.

Checkpoints are JSON with explicit shape metadata per parameter, so a load
against the wrong architecture fails with a clear mismatch error instead of a
silent reshape.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .ctc import CtcHead, init_ctc_head
from .encoder import Affine, EncoderParams, init_encoder
from .errors import ModelMismatchError
from .supcon import ProjectionHead, init_projection


class CheckpointError(ModelMismatchError):
    """Checkpoint file is missing, malformed, or disagrees with its own metadata."""


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 16
    hidden_dim: int = 24
    conv_width: int = 3
    conv_stride: int = 2
    num_layers: int = 2
    vocab_size: int = 13  # includes the blank at index 0
    proj_hidden: int = 24
    proj_dim: int = 32

    def __post_init__(self):
        for name in ("feature_dim", "hidden_dim", "conv_width", "conv_stride",
                     "num_layers", "proj_hidden", "proj_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must cover blank plus at least one token")


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: EncoderParams
    ctc: CtcHead
    proj: ProjectionHead


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    # distinct derived seeds so component inits never share a stream
    return ModelParams(
        config=config,
        encoder=init_encoder(
            feature_dim=config.feature_dim,
            hidden_dim=config.hidden_dim,
            conv_width=config.conv_width,
            conv_stride=config.conv_stride,
            num_layers=config.num_layers,
            seed=seed,
        ),
        ctc=init_ctc_head(config.vocab_size, config.hidden_dim, seed + 1),
        proj=init_projection(config.hidden_dim, config.proj_hidden, config.proj_dim, seed + 2),
    )


def named_params(model: ModelParams) -> dict[str, np.ndarray]:
    """Flat name -> array view of every trainable parameter."""
    tree = {
        "encoder.conv_kernel": model.encoder.conv_kernel,
        "ctc.weight": model.ctc.weight,
        "ctc.bias": model.ctc.bias,
        "proj.w1": model.proj.w1,
        "proj.b1": model.proj.b1,
        "proj.w2": model.proj.w2,
        "proj.b2": model.proj.b2,
    }
    for i, layer in enumerate(model.encoder.layers):
        tree[f"encoder.layers.{i}.weight"] = layer.weight
        tree[f"encoder.layers.{i}.bias"] = layer.bias
    return tree


def set_named_params(model: ModelParams, values: dict[str, np.ndarray]) -> None:
    """Write arrays back into the model in place, validating shapes."""
    current = named_params(model)
    missing = set(current) - set(values)
    if missing:
        raise ModelMismatchError(f"missing parameters: {sorted(missing)}")
    for name, arr in values.items():
        if name not in current:
            raise ModelMismatchError(f"unknown parameter {name}")
        if current[name].shape != arr.shape:
            raise ModelMismatchError(
                f"parameter {name}: expected shape {current[name].shape}, got {arr.shape}"
            )
    model.encoder.conv_kernel = np.array(values["encoder.conv_kernel"], dtype=np.float64)
    model.ctc.weight = np.array(values["ctc.weight"], dtype=np.float64)
    model.ctc.bias = np.array(values["ctc.bias"], dtype=np.float64)
    model.proj.w1 = np.array(values["proj.w1"], dtype=np.float64)
    model.proj.b1 = np.array(values["proj.b1"], dtype=np.float64)
    model.proj.w2 = np.array(values["proj.w2"], dtype=np.float64)
    model.proj.b2 = np.array(values["proj.b2"], dtype=np.float64)
    for i, layer in enumerate(model.encoder.layers):
        layer.weight = np.array(values[f"encoder.layers.{i}.weight"], dtype=np.float64)
        layer.bias = np.array(values[f"encoder.layers.{i}.bias"], dtype=np.float64)


def copy_params(model: ModelParams) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, arr in named_params(model).items()}


def save_checkpoint(model: ModelParams, path: str) -> None:
    payload = {
        "version": 1,
        "config": asdict(model.config),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in named_params(model).items()
        },
    }
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> ModelParams:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}")

    if not isinstance(payload, dict) or payload.get("version") != 1:
        raise CheckpointError("unsupported checkpoint version")
    try:
        config = ModelConfig(**payload["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint config: {exc}")

    model = init_model(config, seed=0)
    expected = named_params(model)
    raw = payload.get("params")
    if not isinstance(raw, dict) or set(raw) != set(expected):
        raise CheckpointError("checkpoint parameter names do not match the architecture")
    values = {}
    for name, entry in raw.items():
        try:
            shape = tuple(entry["shape"])
            arr = np.array(entry["data"], dtype=np.float64).reshape(shape)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"parameter {name} is malformed: {exc}")
        if shape != expected[name].shape:
            raise CheckpointError(
                f"parameter {name}: shape {shape} does not fit config {expected[name].shape}"
            )
        if not np.isfinite(arr).all():
            raise CheckpointError(f"parameter {name} contains non-finite values")
        values[name] = arr
    set_named_params(model, values)
    return model
