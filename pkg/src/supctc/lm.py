"""Token-level n-gram language model with add-k smoothing.

Sequences are padded with begin markers on the left and scored through an
explicit end marker, so the model defines a proper distribution over
finite sequences. Counts are kept for every context length up to order-1;
with smoothing_k = 0 scoring falls back to shorter contexts scaled by a
fixed backoff factor instead of smoothing.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

from .errors import DataError

BOS = -1
EOS = -2
BACKOFF = 0.4


class EmptyCorpus(DataError):
    """No usable training sequences."""


class UnknownToken(DataError):
    """Token outside the model vocabulary."""


class BadOrder(DataError):
    """Model order must be a positive integer."""


class LmFormatError(DataError):
    """Model file is malformed."""


@dataclass
class NGramModel:
    order: int
    smoothing_k: float
    vocab: tuple[int, ...]  # sorted, excludes markers
    counts: dict[tuple[int, ...], dict[int, int]]
    totals: dict[tuple[int, ...], int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.totals:
            self.totals = {ctx: sum(c.values()) for ctx, c in self.counts.items()}
        self._vocab_set = set(self.vocab)

    @property
    def num_outcomes(self) -> int:
        # every vocabulary token plus the end marker
        return len(self.vocab) + 1


def train_lm(sequences, order: int, smoothing_k: float = 1.0, vocab=None) -> NGramModel:
    """Count n-grams of every length up to order over marker-padded sequences."""
    if not isinstance(order, int) or order < 1:
        raise BadOrder(f"order must be a positive integer, got {order!r}")
    if smoothing_k < 0:
        raise ValueError("smoothing_k must be >= 0")
    sequences = [tuple(int(t) for t in seq) for seq in sequences]
    sequences = [seq for seq in sequences if seq]
    if not sequences:
        raise EmptyCorpus("no non-empty training sequences")

    observed = sorted({t for seq in sequences for t in seq})
    if any(t <= 0 for t in observed):
        raise UnknownToken("tokens must be positive integers; values <= 0 are reserved")
    if vocab is None:
        vocab_t = tuple(observed)
    else:
        vocab_t = tuple(sorted(int(t) for t in vocab))
        missing = set(observed) - set(vocab_t)
        if missing:
            raise UnknownToken(f"training tokens outside supplied vocabulary: {sorted(missing)}")

    counts: dict[tuple[int, ...], dict[int, int]] = {}
    for seq in sequences:
        padded = (BOS,) * (order - 1) + seq + (EOS,)
        for pos in range(order - 1, len(padded)):
            target = padded[pos]
            for ctx_len in range(order):
                ctx = padded[pos - ctx_len: pos]
                counts.setdefault(ctx, {}).setdefault(target, 0)
                counts[ctx][target] += 1
    return NGramModel(order=order, smoothing_k=smoothing_k, vocab=vocab_t, counts=counts)


def _check_token(model: NGramModel, token: int) -> int:
    token = int(token)
    if token != EOS and token not in model._vocab_set:
        raise UnknownToken(f"token {token} is not in the model vocabulary")
    return token


def _context(model: NGramModel, prefix) -> tuple[int, ...]:
    prefix = tuple(int(t) for t in prefix)
    for t in prefix:
        if t not in model._vocab_set:
            raise UnknownToken(f"context token {t} is not in the model vocabulary")
    padded = (BOS,) * (model.order - 1) + prefix
    return padded[len(padded) - (model.order - 1):] if model.order > 1 else ()


def _backoff_prob(model: NGramModel, ctx: tuple[int, ...], token: int) -> float:
    cnt = model.counts.get(ctx)
    if cnt is not None and token in cnt:
        return cnt[token] / model.totals[ctx]
    if ctx:
        return BACKOFF * _backoff_prob(model, ctx[1:], token)
    return 0.0


def next_token_logprob(model: NGramModel, prefix, token: int) -> float:
    """log p(token | prefix); token may be the end marker EOS."""
    token = _check_token(model, token)
    ctx = _context(model, prefix)
    if model.smoothing_k > 0:
        cnt = model.counts.get(ctx, {})
        total = model.totals.get(ctx, 0)
        k = model.smoothing_k
        p = (cnt.get(token, 0) + k) / (total + k * model.num_outcomes)
        return math.log(p)
    p = _backoff_prob(model, ctx, token)
    return math.log(p) if p > 0 else float("-inf")


def score_sequence(model: NGramModel, tokens) -> float:
    """Total log-probability of the sequence including its end marker."""
    tokens = tuple(int(t) for t in tokens)
    total = 0.0
    for i, tok in enumerate(tokens):
        total += next_token_logprob(model, tokens[:i], tok)
    total += next_token_logprob(model, tokens, EOS)
    return total


def write_lm(model: NGramModel, path: str) -> None:
    payload = {
        "version": 1,
        "order": model.order,
        "smoothing_k": model.smoothing_k,
        "vocab": list(model.vocab),
        "counts": {
            " ".join(str(t) for t in ctx): {str(tok): n for tok, n in sorted(cnt.items())}
            for ctx, cnt in sorted(model.counts.items())
        },
    }
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def read_lm(path: str) -> NGramModel:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise LmFormatError(f"model file not found: {path}")
    except json.JSONDecodeError as exc:
        raise LmFormatError(f"model file is not valid JSON: {exc}")
    try:
        if payload["version"] != 1:
            raise LmFormatError("unsupported model file version")
        order = int(payload["order"])
        smoothing_k = float(payload["smoothing_k"])
        vocab = tuple(int(t) for t in payload["vocab"])
        counts = {}
        for ctx_key, cnt in payload["counts"].items():
            ctx = tuple(int(t) for t in ctx_key.split()) if ctx_key else ()
            counts[ctx] = {int(tok): int(n) for tok, n in cnt.items()}
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise LmFormatError(f"model file is malformed: {exc}")
    if order < 1:
        raise LmFormatError("order must be >= 1")
    return NGramModel(order=order, smoothing_k=smoothing_k, vocab=vocab, counts=counts)
