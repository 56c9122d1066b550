"""Supervised-contrastive regularizer over pooled utterance embeddings.

Frame representations are pooled with a validity-masked mean, projected by a
two-layer ReLU MLP, and length-normalized. The loss pulls together embeddings
whose utterances share a transcript and pushes apart the rest, with a
temperature-scaled dot-product similarity. Anchors without any positive in
the batch contribute nothing and are reported back to the caller.

All gradients are analytic; the projection/normalization backward applies the
Jacobian of z = v / ||v|| explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SupctcError, TrainingError

_EPS_NORM = 1e-12


class BadTemperature(SupctcError):
    """Temperature must be strictly positive."""


class NoValidAnchors(TrainingError):
    """Every anchor in the batch lacks a positive partner."""


class DegenerateProjection(TrainingError):
    """A projected vector has vanishing norm and cannot be normalized."""


@dataclass
class ProjectionHead:
    w1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (P, H)
    b2: np.ndarray  # (P,)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[0]


def init_projection(input_dim: int, hidden_dim: int, output_dim: int, seed: int) -> ProjectionHead:
    rng = np.random.default_rng(seed)
    s1 = 1.0 / np.sqrt(input_dim)
    s2 = 1.0 / np.sqrt(hidden_dim)
    return ProjectionHead(
        w1=rng.uniform(-s1, s1, size=(hidden_dim, input_dim)),
        b1=rng.uniform(-s1, s1, size=hidden_dim),
        w2=rng.uniform(-s2, s2, size=(output_dim, hidden_dim)),
        b2=rng.uniform(-s2, s2, size=output_dim),
    )


def valid_mask(rep) -> np.ndarray:
    """Binary frame-validity vector for one representation: 1 iff t < valid_len."""
    total = rep.values.shape[0]
    return (np.arange(total) < rep.valid_len).astype(np.float64)


@dataclass
class PoolCache:
    mask: np.ndarray  # (B, T) float 0/1
    counts: np.ndarray  # (B,)


def masked_mean_pool(frames: np.ndarray, valid_lens: np.ndarray) -> tuple[np.ndarray, PoolCache]:
    """Mean over valid frames only; padded rows never leak into the average."""
    batch, t_max, _ = frames.shape
    valid_lens = np.asarray(valid_lens, dtype=np.int64)
    if valid_lens.shape != (batch,):
        raise ValueError("valid_lens must have one entry per batch item")
    if (valid_lens < 1).any() or (valid_lens > t_max).any():
        raise ValueError("valid lengths must lie in [1, T]")
    mask = (np.arange(t_max)[None, :] < valid_lens[:, None]).astype(frames.dtype)
    counts = mask.sum(axis=1)
    pooled = (frames * mask[:, :, None]).sum(axis=1) / counts[:, None]
    return pooled, PoolCache(mask=mask, counts=counts)


def masked_mean_pool_backward(grad_pooled: np.ndarray, cache: PoolCache) -> np.ndarray:
    """Spread each pooled gradient uniformly over that item's valid frames."""
    per_frame = grad_pooled / cache.counts[:, None]  # (B, D)
    return per_frame[:, None, :] * cache.mask[:, :, None]


@dataclass
class ProjectionCache:
    pooled: np.ndarray  # (B, D)
    hidden: np.ndarray  # (B, H) post-ReLU
    pre_relu: np.ndarray  # (B, H)
    raw: np.ndarray  # (B, P) pre-normalization
    norms: np.ndarray  # (B,)
    z: np.ndarray  # (B, P)


def project_and_normalize(head: ProjectionHead, pooled: np.ndarray) -> tuple[np.ndarray, ProjectionCache]:
    pre = pooled @ head.w1.T + head.b1
    hidden = np.maximum(pre, 0.0)
    raw = hidden @ head.w2.T + head.b2
    norms = np.linalg.norm(raw, axis=1)
    if (norms < _EPS_NORM).any():
        raise DegenerateProjection("projected vector collapsed to zero norm")
    z = raw / norms[:, None]
    return z, ProjectionCache(pooled=pooled, hidden=hidden, pre_relu=pre, raw=raw, norms=norms, z=z)


def projection_backward(
    head: ProjectionHead, cache: ProjectionCache, grad_z: np.ndarray
) -> tuple[ProjectionHead, np.ndarray]:
    """Backprop through normalization and the MLP; returns (head grads, grad pooled)."""
    # d/dv of v/||v||: (g - z (z . g)) / ||v||
    inner = (cache.z * grad_z).sum(axis=1, keepdims=True)
    grad_raw = (grad_z - cache.z * inner) / cache.norms[:, None]
    grad_w2 = grad_raw.T @ cache.hidden
    grad_b2 = grad_raw.sum(axis=0)
    grad_hidden = grad_raw @ head.w2
    grad_pre = grad_hidden * (cache.pre_relu > 0.0)
    grad_w1 = grad_pre.T @ cache.pooled
    grad_b1 = grad_pre.sum(axis=0)
    grad_pooled = grad_pre @ head.w1
    return ProjectionHead(w1=grad_w1, b1=grad_b1, w2=grad_w2, b2=grad_b2), grad_pooled


def supcon_loss_and_grad(
    z: np.ndarray, transcript_ids, temperature: float, anchors=None
) -> tuple[float, np.ndarray, int]:
    """Supervised contrastive loss over normalized embeddings.

    Positives for anchor i are the other batch items with the same transcript
    id. Anchors with no positive are skipped; the loss averages over the rest.
    `anchors` restricts which indices act as anchors (default: all of them);
    non-anchor items still appear as positives and in the denominators.
    Returns (loss, gradient w.r.t. z, number of skipped anchors).
    """
    if temperature <= 0.0:
        raise BadTemperature(f"temperature must be > 0, got {temperature}")
    n = z.shape[0]
    ids = list(transcript_ids)
    if len(ids) != n:
        raise ValueError("one transcript id per embedding required")
    if anchors is None:
        anchor_idx = np.arange(n)
    else:
        anchor_idx = np.unique(np.asarray(list(anchors), dtype=np.int64))
        if anchor_idx.size == 0:
            raise ValueError("anchor set must be non-empty")
        if (anchor_idx < 0).any() or (anchor_idx >= n).any():
            raise ValueError("anchor indices must lie in [0, B)")

    same = np.array([[ids[i] == ids[j] for j in range(n)] for i in range(n)], dtype=bool)
    np.fill_diagonal(same, False)
    pos_counts = same.sum(axis=1)
    contributing = np.array([i for i in anchor_idx if pos_counts[i] > 0], dtype=np.int64)
    n_contrib = contributing.size
    skipped = anchor_idx.size - n_contrib
    if n_contrib == 0:
        raise NoValidAnchors("no anchor has a positive partner in the batch")

    sims = (z @ z.T) / temperature
    off_diag = ~np.eye(n, dtype=bool)
    # softmax over k != i, stabilized per row
    masked = np.where(off_diag, sims, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    expd = np.exp(masked - row_max)
    denom = expd.sum(axis=1, keepdims=True)
    log_denom = np.log(denom) + row_max
    probs = expd / denom

    loss = 0.0
    g = np.zeros((n, n))
    for i in contributing:
        pos = np.flatnonzero(same[i])
        loss += -(sims[i, pos] - log_denom[i, 0]).sum() / pos_counts[i]
        g[i] = probs[i]
        g[i, pos] -= 1.0 / pos_counts[i]
    loss /= n_contrib
    g /= n_contrib

    grad_z = (g + g.T) @ z / temperature
    return float(loss), grad_z, skipped
