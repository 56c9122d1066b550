"""CTC objective, decoding, and WER scoring.

The loss runs the forward-backward recursion over the blank-augmented label
sequence entirely in log space; -inf acts as the additive identity, so long
inputs cannot underflow. Gradients are returned w.r.t. pre-softmax logits.

Decoding offers greedy collapse and a prefix beam search. Beams are pruned by
their best single-path score, which makes a width-1 beam follow exactly the
per-frame argmax path (greedy), while the reported result ranks surviving
prefixes by total merged probability, so an unpruned beam returns the
maximum-a-posteriori collapsed sequence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .encoder import FrameRepresentation, ShapeMismatch
from .errors import DataError, SupctcError, TrainingError

NEG_INF = float("-inf")


class Infeasible(TrainingError):
    """Target cannot be aligned within the available frames."""


class TooLarge(SupctcError):
    """Brute-force enumeration would exceed its path budget."""


class InvalidBeam(SupctcError):
    """Beam width below 1."""


class LengthMismatch(DataError):
    """Reference and hypothesis lists differ in length."""


class EmptyReference(DataError):
    """A reference token sequence is empty."""


@dataclass
class CtcHead:
    weight: np.ndarray  # (V, D)
    bias: np.ndarray  # (V,)

    @property
    def vocab_size(self) -> int:
        return self.weight.shape[0]


@dataclass
class Posteriorgram:
    """Per-frame log-probabilities over the vocabulary; rows normalize to 1."""

    log_probs: np.ndarray  # (T~, V)

    @property
    def num_frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.log_probs.shape[1]


@dataclass
class DecodeResult:
    tokens: tuple[int, ...]
    score: float


def init_ctc_head(vocab_size: int, hidden_dim: int, seed: int) -> CtcHead:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(hidden_dim)
    return CtcHead(
        weight=rng.uniform(-scale, scale, size=(vocab_size, hidden_dim)),
        bias=rng.uniform(-scale, scale, size=vocab_size),
    )


def ctc_logits(head: CtcHead, rep: FrameRepresentation) -> Posteriorgram:
    """Log-softmax of the linear head over the valid frames only."""
    h = rep.valid
    if h.shape[1] != head.weight.shape[1]:
        raise ShapeMismatch(
            f"representation dim {h.shape[1]} != head input dim {head.weight.shape[1]}"
        )
    logits = h @ head.weight.T + head.bias
    logits -= logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return Posteriorgram(log_probs=logits - log_norm)


def ctc_head_backward(
    head: CtcHead, rep: FrameRepresentation, grad_logits: np.ndarray
) -> tuple[CtcHead, np.ndarray]:
    """Backprop grad w.r.t. pre-softmax logits into (head grads, grad over valid H rows)."""
    h = rep.valid
    if grad_logits.shape != (h.shape[0], head.vocab_size):
        raise ShapeMismatch("grad_logits shape mismatch")
    grad_head = CtcHead(weight=grad_logits.T @ h, bias=grad_logits.sum(axis=0))
    return grad_head, grad_logits @ head.weight


def _augment(target: tuple[int, ...]) -> np.ndarray:
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target
    return ext


def min_frames(target: tuple[int, ...]) -> int:
    dups = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + dups


def _check_target(target, vocab_size: int) -> tuple[int, ...]:
    target = tuple(int(t) for t in target)
    if not target:
        raise ValueError("target must be non-empty")
    if any(t <= 0 or t >= vocab_size for t in target):
        raise ValueError("target tokens must lie in [1, V)")
    return target


def ctc_loss_and_grad(post: Posteriorgram, target) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the target plus its exact logit gradient.

    Forward variable alpha includes the emission at its own frame; backward
    variable beta excludes it, so alpha+beta is the posterior occupancy of an
    augmented state and the gradient is softmax(logits) minus the per-symbol
    occupancy.
    """
    lp = post.log_probs
    t_len, vocab = lp.shape
    target = _check_target(target, vocab)
    if t_len < min_frames(target):
        raise Infeasible(
            f"target needs >= {min_frames(target)} frames, posteriorgram has {t_len}"
        )

    ext = _augment(target)
    s_len = ext.shape[0]
    # skip from s-2 to s allowed when s is a token state differing from s-2
    allow = np.zeros(s_len, dtype=bool)
    allow[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])
    lp_ext = lp[:, ext]

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = lp_ext[0, 0]
    alpha[0, 1] = lp_ext[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        cand = np.logaddexp(prev, np.concatenate(([NEG_INF], prev[:-1])))
        skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        cand = np.where(allow, np.logaddexp(cand, skip), cand)
        alpha[t] = cand + lp_ext[t]

    log_p = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    if log_p == NEG_INF:
        raise Infeasible("no feasible alignment")

    beta = np.full((t_len, s_len), NEG_INF)
    beta[-1, -1] = 0.0
    beta[-1, -2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + lp_ext[t + 1]
        cand = np.logaddexp(nxt, np.concatenate((nxt[1:], [NEG_INF])))
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
        allow_fwd = np.concatenate((allow[2:], [False, False]))
        beta[t] = np.where(allow_fwd, np.logaddexp(cand, skip), cand)

    occupancy = np.exp(alpha + beta - log_p)  # (T~, S)
    gamma = np.zeros((t_len, vocab))
    rows = np.broadcast_to(np.arange(t_len)[:, None], occupancy.shape)
    cols = np.broadcast_to(ext[None, :], occupancy.shape)
    np.add.at(gamma, (rows, cols), occupancy)
    grad_logits = np.exp(lp) - gamma
    return float(-log_p), grad_logits


def collapse(path, blank: int = 0) -> tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for sym in path:
        if sym != prev and sym != blank:
            out.append(int(sym))
        prev = sym
    return tuple(out)


def brute_force_ctc(post: Posteriorgram, target, max_paths: int = 10_000_000) -> float:
    """Enumeration oracle: sum the probability of every path collapsing to target."""
    lp = post.log_probs
    t_len, vocab = lp.shape
    target = _check_target(target, vocab)
    n_paths = vocab**t_len
    if n_paths > max_paths:
        raise TooLarge(f"{n_paths} paths exceed budget {max_paths}")

    target_arr = np.array(target)
    total = 0.0
    chunk_size = 1 << 16
    path_iter = itertools.product(range(vocab), repeat=t_len)
    while True:
        chunk = list(itertools.islice(path_iter, chunk_size))
        if not chunk:
            break
        paths = np.array(chunk, dtype=np.int64)
        logp = lp[np.arange(t_len), paths].sum(axis=1)
        keep = np.ones(paths.shape, dtype=bool)
        keep[:, 1:] = paths[:, 1:] != paths[:, :-1]
        sel = keep & (paths != 0)
        right_len = sel.sum(axis=1) == len(target)
        if right_len.any():
            toks = paths[right_len][sel[right_len]].reshape(-1, len(target))
            match = (toks == target_arr).all(axis=1)
            total += float(np.exp(logp[right_len][match]).sum())
    if total == 0.0:
        raise Infeasible("no path collapses to target")
    return float(-np.log(total))


def greedy_decode(post: Posteriorgram) -> DecodeResult:
    """Per-frame argmax (ties toward the lowest index), collapsed."""
    idx = np.argmax(post.log_probs, axis=1)
    score = float(post.log_probs[np.arange(post.num_frames), idx].sum())
    return DecodeResult(tokens=collapse(idx), score=score)


@dataclass
class _Beam:
    pb: float = NEG_INF  # merged log mass of paths ending in blank
    pnb: float = NEG_INF  # merged log mass of paths ending in the last token
    vb: float = NEG_INF  # best single-path score ending in blank
    vnb: float = NEG_INF  # best single-path score ending in non-blank

    def merged(self) -> float:
        return float(np.logaddexp(self.pb, self.pnb))

    def best_path(self) -> float:
        return max(self.vb, self.vnb)


def beam_search_decode(
    post: Posteriorgram,
    beam_width: int,
    lm=None,
    lm_weight: float = 0.0,
    word_bonus: float = 0.0,
) -> DecodeResult:
    """Prefix beam search with optional shallow n-gram fusion.

    Every token extension adds lm_weight * log p_LM(token | prefix) +
    word_bonus to the acoustic score. Ties break toward the lexicographically
    smallest prefix, so decoding is deterministic.
    """
    if beam_width < 1:
        raise InvalidBeam(f"beam_width must be >= 1, got {beam_width}")
    if lm_weight < 0:
        raise ValueError("lm_weight must be >= 0")
    lp = post.log_probs
    t_len, vocab = lp.shape
    use_lm = lm is not None and lm_weight > 0.0

    lm_cache: dict[tuple[tuple[int, ...], int], float] = {}

    def bonus(prefix: tuple[int, ...], token: int) -> float:
        if not use_lm:
            return word_bonus
        key = (prefix, token)
        if key not in lm_cache:
            from .lm import next_token_logprob

            lm_cache[key] = lm_weight * next_token_logprob(lm, prefix, token)
        return lm_cache[key] + word_bonus

    beams: dict[tuple[int, ...], _Beam] = {(): _Beam(pb=0.0, vb=0.0)}
    for t in range(t_len):
        frame = lp[t]
        new: dict[tuple[int, ...], _Beam] = {}

        def entry(prefix):
            beam = new.get(prefix)
            if beam is None:
                beam = _Beam()
                new[prefix] = beam
            return beam

        for prefix, old in beams.items():
            merged = old.merged()
            best = old.best_path()
            last = prefix[-1] if prefix else -1

            stay = entry(prefix)
            lp_blank = float(frame[0])
            stay.pb = float(np.logaddexp(stay.pb, merged + lp_blank))
            stay.vb = max(stay.vb, best + lp_blank)

            for k in range(1, vocab):
                lp_k = float(frame[k])
                if k == last:
                    # repeat without separating blank merges into the same prefix
                    stay.pnb = float(np.logaddexp(stay.pnb, old.pnb + lp_k))
                    stay.vnb = max(stay.vnb, old.vnb + lp_k)
                    if old.pb > NEG_INF or old.vb > NEG_INF:
                        add = bonus(prefix, k)
                        ext = entry(prefix + (k,))
                        ext.pnb = float(np.logaddexp(ext.pnb, old.pb + lp_k + add))
                        ext.vnb = max(ext.vnb, old.vb + lp_k + add)
                else:
                    add = bonus(prefix, k)
                    ext = entry(prefix + (k,))
                    ext.pnb = float(np.logaddexp(ext.pnb, merged + lp_k + add))
                    ext.vnb = max(ext.vnb, best + lp_k + add)

        ranked = sorted(new.items(), key=lambda kv: (-kv[1].best_path(), kv[0]))
        beams = dict(ranked[:beam_width])

    if not beams:
        return DecodeResult(tokens=(), score=NEG_INF)
    final = sorted(beams.items(), key=lambda kv: (-kv[1].merged(), kv[0]))[0]
    return DecodeResult(tokens=final[0], score=final[1].merged())


def levenshtein(ref, hyp) -> int:
    """Edit distance with unit substitution/insertion/deletion costs."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[len(hyp)]


def word_error_rate(refs: list, hyps: list) -> float:
    return wer_summary(refs, hyps)["wer"]


def wer_summary(refs: list, hyps: list) -> dict:
    """Corpus-level WER: total edit distance over total reference length."""
    if len(refs) != len(hyps):
        raise LengthMismatch(f"{len(refs)} references vs {len(hyps)} hypotheses")
    edits = 0
    ref_len = 0
    for ref, hyp in zip(refs, hyps):
        if len(ref) == 0:
            raise EmptyReference("reference token sequence is empty")
        edits += levenshtein(ref, hyp)
        ref_len += len(ref)
    return {"wer": edits / ref_len, "n_utt": len(refs), "edits": edits, "ref_len": ref_len}
