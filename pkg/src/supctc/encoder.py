"""Small trainable acoustic encoder with exact manual backprop.

Architecture: one strided temporal convolution (no bias) followed by L
per-frame affine+tanh layers. tanh keeps gradients nonzero everywhere, which
makes finite-difference verification of the backward pass well conditioned.
All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelMismatchError


class TooShort(ModelMismatchError):
    """Utterance has fewer raw frames than the convolution width."""


class ShapeMismatch(ModelMismatchError):
    """Gradient or input shapes inconsistent with the parameters."""


@dataclass
class Affine:
    weight: np.ndarray  # (D, D)
    bias: np.ndarray  # (D,)


@dataclass
class EncoderParams:
    conv_kernel: np.ndarray  # (D, w, F)
    conv_stride: int
    layers: list[Affine]

    @property
    def feature_dim(self) -> int:
        return self.conv_kernel.shape[2]

    @property
    def hidden_dim(self) -> int:
        return self.conv_kernel.shape[0]

    @property
    def conv_width(self) -> int:
        return self.conv_kernel.shape[1]


@dataclass
class FrameRepresentation:
    """Padded frame matrix; rows at index >= valid_len are exactly zero."""

    values: np.ndarray  # (T, D)
    valid_len: int

    @property
    def valid(self) -> np.ndarray:
        return self.values[: self.valid_len]


@dataclass
class EncoderCache:
    """Forward activations kept for the backward pass (one entry per utterance)."""

    windows: list[np.ndarray]  # (T~, w*F) strided input windows
    activations: list[list[np.ndarray]]  # [conv_out, tanh_1, ..., tanh_L]


@dataclass
class EncoderGrads:
    conv_kernel: np.ndarray
    layers: list[Affine]


def init_encoder(
    feature_dim: int,
    hidden_dim: int,
    conv_width: int,
    conv_stride: int,
    num_layers: int,
    seed: int,
) -> EncoderParams:
    """Draw weights uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    if conv_width < 1 or conv_stride < 1 or hidden_dim < 1 or num_layers < 0:
        raise ValueError("invalid encoder configuration")
    rng = np.random.default_rng(seed)
    conv_scale = 1.0 / np.sqrt(conv_width * feature_dim)
    kernel = rng.uniform(-conv_scale, conv_scale, size=(hidden_dim, conv_width, feature_dim))
    layer_scale = 1.0 / np.sqrt(hidden_dim)
    layers = [
        Affine(
            weight=rng.uniform(-layer_scale, layer_scale, size=(hidden_dim, hidden_dim)),
            bias=rng.uniform(-layer_scale, layer_scale, size=hidden_dim),
        )
        for _ in range(num_layers)
    ]
    return EncoderParams(conv_kernel=kernel, conv_stride=conv_stride, layers=layers)


def output_length(raw_frames: int, conv_width: int, conv_stride: int) -> int:
    if raw_frames < conv_width:
        raise TooShort(f"need >= {conv_width} raw frames, got {raw_frames}")
    return (raw_frames - conv_width) // conv_stride + 1


def _forward_one(params: EncoderParams, features: np.ndarray):
    w = params.conv_width
    s = params.conv_stride
    t_out = output_length(features.shape[0], w, s)
    if features.shape[1] != params.feature_dim:
        raise ShapeMismatch(
            f"features have dim {features.shape[1]}, encoder expects {params.feature_dim}"
        )
    # (T~, w, F) windows flattened so the convolution is one matmul
    win = np.lib.stride_tricks.sliding_window_view(features, w, axis=0)[::s]
    win = np.ascontiguousarray(win.transpose(0, 2, 1).reshape(t_out, w * params.feature_dim))
    kernel_flat = params.conv_kernel.reshape(params.hidden_dim, -1)
    acts = [win @ kernel_flat.T]
    for layer in params.layers:
        acts.append(np.tanh(acts[-1] @ layer.weight.T + layer.bias))
    return win, acts


def encode_with_cache(
    params: EncoderParams, features_list: list[np.ndarray]
) -> tuple[list[FrameRepresentation], EncoderCache]:
    """Encode a batch, padding to the longest output, and keep activations."""
    windows, activations = [], []
    outputs = []
    for features in features_list:
        win, acts = _forward_one(params, features)
        windows.append(win)
        activations.append(acts)
        outputs.append(acts[-1])
    t_max = max(o.shape[0] for o in outputs)
    reps = []
    for out in outputs:
        padded = np.zeros((t_max, params.hidden_dim))
        padded[: out.shape[0]] = out
        reps.append(FrameRepresentation(values=padded, valid_len=out.shape[0]))
    return reps, EncoderCache(windows=windows, activations=activations)


def encode_batch(
    params: EncoderParams, features_list: list[np.ndarray]
) -> list[FrameRepresentation]:
    reps, _ = encode_with_cache(params, features_list)
    return reps


def zero_grads(params: EncoderParams) -> EncoderGrads:
    return EncoderGrads(
        conv_kernel=np.zeros_like(params.conv_kernel),
        layers=[
            Affine(weight=np.zeros_like(l.weight), bias=np.zeros_like(l.bias))
            for l in params.layers
        ],
    )


def encoder_backward(
    params: EncoderParams,
    cache: EncoderCache,
    grad_h_list: list[np.ndarray],
) -> EncoderGrads:
    """Exact gradients of a scalar loss w.r.t. all encoder parameters.

    grad_h_list holds d(loss)/d(H_i); entries may be padded, in which case the
    padded rows must be zero and are sliced off against the cached lengths.
    """
    if len(grad_h_list) != len(cache.windows):
        raise ShapeMismatch("gradient list length differs from cached batch size")
    grads = zero_grads(params)
    for win, acts, grad_h in zip(cache.windows, cache.activations, grad_h_list):
        t_valid = acts[-1].shape[0]
        if grad_h.shape[0] < t_valid or grad_h.shape[1] != params.hidden_dim:
            raise ShapeMismatch(
                f"grad_H shape {grad_h.shape} incompatible with output ({t_valid}, {params.hidden_dim})"
            )
        g = np.asarray(grad_h[:t_valid], dtype=np.float64)
        for idx in range(len(params.layers) - 1, -1, -1):
            out_act = acts[idx + 1]
            in_act = acts[idx]
            g_pre = g * (1.0 - out_act * out_act)  # tanh'
            grads.layers[idx].weight += g_pre.T @ in_act
            grads.layers[idx].bias += g_pre.sum(axis=0)
            g = g_pre @ params.layers[idx].weight
        grads.conv_kernel += (g.T @ win).reshape(params.conv_kernel.shape)
    return grads
