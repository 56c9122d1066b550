"""Two-phase training loop for the combined recognition + contrastive objective.

Phase 1 warms up the recognition head on frozen encoder features. Phase 2
trains everything with L = L_ctc + lambda_t * L_supcon, where lambda_t ramps
linearly from 0 to lambda_max over the first ramp_ratio * t_max steps.
Batches are transcript-balanced (M transcripts x K utterances from distinct
speakers) so every anchor has exactly K-1 positives. Early stopping watches
validation CTC loss; the best-epoch parameters are returned.

Everything is driven by one seeded generator, so identical configs produce
identical histories and parameters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .corpus import SplitPlan, Utterance, Vocabulary
from .ctc import Infeasible, ctc_head_backward, ctc_logits, ctc_loss_and_grad
from .encoder import encode_with_cache, encoder_backward
from .errors import TrainingError
from .model import ModelConfig, ModelParams, copy_params, init_model, named_params, set_named_params
from .supcon import (
    NoValidAnchors,
    masked_mean_pool,
    masked_mean_pool_backward,
    project_and_normalize,
    projection_backward,
    supcon_loss_and_grad,
)

MODE_CTC = "ctc_only"
MODE_COMBINED = "ctc_plus_supcon"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class InsufficientTranscripts(TrainingError):
    """Training set cannot supply the requested balanced batch."""


class EmptyValidation(TrainingError):
    """Validation split has no utterances."""


@dataclass(frozen=True)
class TrainConfig:
    mode: str = MODE_COMBINED
    lambda_max: float = 3.0
    ramp_ratio: float = 0.1
    temperature: float = 0.1
    t_max: int = 1000
    m_transcripts: int = 8
    k_utterances: int = 4
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"  # or "warmup_cosine"
    lr_warmup_steps: int = 100
    weight_decay: float = 0.01
    warmup_epochs: int = 1
    warmup_batch_size: int = 4
    patience: int = 5
    log_interval: int = 10
    anchor_policy: str = "all"  # or "one_per_transcript"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (MODE_CTC, MODE_COMBINED):
            raise ValueError(f"mode must be {MODE_CTC} or {MODE_COMBINED}")
        if self.anchor_policy not in ("all", "one_per_transcript"):
            raise ValueError("anchor_policy must be all or one_per_transcript")
        if not (0.0 < self.ramp_ratio <= 1.0):
            raise ValueError("ramp_ratio must lie in (0, 1]")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.m_transcripts < 1 or self.k_utterances < 1:
            raise ValueError("m_transcripts and k_utterances must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.lr_schedule not in ("constant", "warmup_cosine"):
            raise ValueError("lr_schedule must be constant or warmup_cosine")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.warmup_batch_size < 1 or self.log_interval < 1:
            raise ValueError("warmup_batch_size and log_interval must be >= 1")


@dataclass
class HistoryRow:
    step: int
    epoch: int
    loss: float
    ctc_loss: float
    supcon_loss: float
    lambda_t: float
    val_loss: float | None = None


@dataclass
class _Moments:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class TrainState:
    model: ModelParams
    step: int = 0
    epoch: int = 0
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0
    moments: dict[str, _Moments] = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


def ramp_weight(cfg: TrainConfig, t: int) -> float:
    if t < 0:
        raise ValueError("step must be >= 0")
    horizon = cfg.ramp_ratio * cfg.t_max
    return cfg.lambda_max * min(1.0, t / horizon)


def learning_rate_at(cfg: TrainConfig, t: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    w = min(cfg.lr_warmup_steps, cfg.t_max)
    if t < w:
        return cfg.learning_rate * (t + 1) / w
    if cfg.t_max <= w:
        return cfg.learning_rate
    frac = (t - w) / (cfg.t_max - w)
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * min(1.0, frac)))


def sample_balanced_batch(
    utterances: list[Utterance], m_transcripts: int, k_utterances: int, rng: np.random.Generator
) -> list[str]:
    """M distinct transcripts, each with K utterances from distinct speakers."""
    if k_utterances == 1:
        warnings.warn("k_utterances=1 leaves every contrastive anchor without positives")
    by_transcript: dict[str, dict[str, list[str]]] = {}
    for utt in utterances:
        by_transcript.setdefault(utt.transcript_id, {}).setdefault(utt.speaker_id, []).append(utt.id)
    eligible = sorted(c for c, spk in by_transcript.items() if len(spk) >= k_utterances)
    if len(eligible) < m_transcripts:
        raise InsufficientTranscripts(
            f"need {m_transcripts} transcripts with >= {k_utterances} speakers, "
            f"found {len(eligible)}"
        )
    chosen = rng.choice(len(eligible), size=m_transcripts, replace=False)
    batch: list[str] = []
    for idx in sorted(chosen):
        transcript = eligible[idx]
        speakers = sorted(by_transcript[transcript])
        picks = rng.choice(len(speakers), size=k_utterances, replace=False)
        for s_idx in sorted(picks):
            ids = sorted(by_transcript[transcript][speakers[s_idx]])
            pick = ids[0] if len(ids) == 1 else ids[int(rng.integers(len(ids)))]
            batch.append(pick)
    return batch


def _ctc_branch(model: ModelParams, reps, batch: list[Utterance]):
    """Mean CTC loss over the batch, with head grads and per-item grads on H."""
    total = 0.0
    grad_head_w = np.zeros_like(model.ctc.weight)
    grad_head_b = np.zeros_like(model.ctc.bias)
    grad_h = [np.zeros_like(rep.values) for rep in reps]
    scale = 1.0 / len(batch)
    for i, (rep, utt) in enumerate(zip(reps, batch)):
        post = ctc_logits(model.ctc, rep)
        try:
            loss, grad_logits = ctc_loss_and_grad(post, utt.tokens)
        except Infeasible as exc:
            raise Infeasible(f"utterance {utt.id}: {exc}") from exc
        total += loss * scale
        grad_logits = grad_logits * scale
        gh, g_valid = ctc_head_backward(model.ctc, rep, grad_logits)
        grad_head_w += gh.weight
        grad_head_b += gh.bias
        grad_h[i][: rep.valid_len] += g_valid
    return total, grad_head_w, grad_head_b, grad_h


def _anchor_indices(batch: list[Utterance], policy: str):
    if policy == "all":
        return None
    first: dict[str, int] = {}
    for i, utt in enumerate(batch):
        first.setdefault(utt.transcript_id, i)
    return sorted(first.values())


def _supcon_branch(
    model: ModelParams, reps, batch: list[Utterance], temperature: float,
    anchor_policy: str = "all",
):
    """Contrastive loss over pooled projected embeddings with grads on H."""
    frames = np.stack([rep.values for rep in reps])
    valid_lens = np.array([rep.valid_len for rep in reps])
    pooled, pool_cache = masked_mean_pool(frames, valid_lens)
    z, proj_cache = project_and_normalize(model.proj, pooled)
    ids = [utt.transcript_id for utt in batch]
    try:
        loss, grad_z, skipped = supcon_loss_and_grad(
            z, ids, temperature, anchors=_anchor_indices(batch, anchor_policy)
        )
    except NoValidAnchors as exc:
        raise NoValidAnchors(
            f"batch {[utt.id for utt in batch]}: {exc}"
        ) from exc
    proj_grads, grad_pooled = projection_backward(model.proj, proj_cache, grad_z)
    grad_frames = masked_mean_pool_backward(grad_pooled, pool_cache)
    return loss, proj_grads, [grad_frames[i] for i in range(len(batch))], skipped


def combined_forward_backward(
    model: ModelParams, batch: list[Utterance], lambda_t: float, temperature: float,
    mode: str, anchor_policy: str = "all",
):
    """Loss and full gradient tree for one batch, without touching parameters."""
    reps, cache = encode_with_cache(model.encoder, [u.features for u in batch])
    ctc_loss, gw, gb, grad_h = _ctc_branch(model, reps, batch)

    supcon_loss = 0.0
    grads: dict[str, np.ndarray] = {"ctc.weight": gw, "ctc.bias": gb}
    if mode == MODE_COMBINED:
        supcon_loss, proj_grads, grad_h_sup, _ = _supcon_branch(
            model, reps, batch, temperature, anchor_policy
        )
        grads["proj.w1"] = lambda_t * proj_grads.w1
        grads["proj.b1"] = lambda_t * proj_grads.b1
        grads["proj.w2"] = lambda_t * proj_grads.w2
        grads["proj.b2"] = lambda_t * proj_grads.b2
        for gh, gs in zip(grad_h, grad_h_sup):
            gh += lambda_t * gs

    enc_grads = encoder_backward(model.encoder, cache, grad_h)
    grads["encoder.conv_kernel"] = enc_grads.conv_kernel
    for i, layer in enumerate(enc_grads.layers):
        grads[f"encoder.layers.{i}.weight"] = layer.weight
        grads[f"encoder.layers.{i}.bias"] = layer.bias

    total = ctc_loss + lambda_t * supcon_loss
    return total, ctc_loss, supcon_loss, grads


def batch_ctc_loss(model: ModelParams, batch: list[Utterance]) -> float:
    """Forward-only mean CTC loss (used for validation)."""
    reps = encode_with_cache(model.encoder, [u.features for u in batch])[0]
    total = 0.0
    for rep, utt in zip(reps, batch):
        post = ctc_logits(model.ctc, rep)
        loss, _ = ctc_loss_and_grad(post, utt.tokens)
        total += loss
    return total / len(batch)


def _adamw_update(
    state: TrainState, grads: dict[str, np.ndarray], lr: float, weight_decay: float
) -> None:
    params = named_params(state.model)
    for name, grad in grads.items():
        p = params[name]
        mom = state.moments.get(name)
        if mom is None:
            mom = _Moments(m=np.zeros_like(p), v=np.zeros_like(p))
            state.moments[name] = mom
        mom.t += 1
        mom.m = ADAM_BETA1 * mom.m + (1 - ADAM_BETA1) * grad
        mom.v = ADAM_BETA2 * mom.v + (1 - ADAM_BETA2) * grad * grad
        m_hat = mom.m / (1 - ADAM_BETA1**mom.t)
        v_hat = mom.v / (1 - ADAM_BETA2**mom.t)
        p -= lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + weight_decay * p)


def combined_step(
    state: TrainState, batch: list[Utterance], cfg: TrainConfig
) -> tuple[float, float, float, TrainState]:
    """One optimization step; increments the ramp step counter."""
    lambda_t = ramp_weight(cfg, state.step) if cfg.mode == MODE_COMBINED else 0.0
    total, ctc_loss, supcon_loss, grads = combined_forward_backward(
        state.model, batch, lambda_t, cfg.temperature, cfg.mode, cfg.anchor_policy
    )
    _adamw_update(state, grads, learning_rate_at(cfg, state.step), cfg.weight_decay)
    state.step += 1
    return total, ctc_loss, supcon_loss, state


def _warmup_step(state: TrainState, batch: list[Utterance], cfg: TrainConfig) -> float:
    """Recognition-head-only update on a frozen encoder."""
    reps = encode_with_cache(state.model.encoder, [u.features for u in batch])[0]
    loss, gw, gb, _ = _ctc_branch(state.model, reps, batch)
    _adamw_update(
        state, {"ctc.weight": gw, "ctc.bias": gb}, cfg.learning_rate, cfg.weight_decay
    )
    return loss


def validation_loss(model: ModelParams, val_utts: list[Utterance], chunk: int = 16) -> float:
    if not val_utts:
        raise EmptyValidation("validation split is empty")
    total = 0.0
    for start in range(0, len(val_utts), chunk):
        part = val_utts[start: start + chunk]
        total += batch_ctc_loss(model, part) * len(part)
    return total / len(val_utts)


def train(
    utterances: list[Utterance],
    vocab: Vocabulary,
    split: SplitPlan,
    cfg: TrainConfig,
    model_config: ModelConfig | None = None,
) -> tuple[ModelParams, list[HistoryRow]]:
    by_id = {u.id: u for u in utterances}
    train_utts = [by_id[i] for i in sorted(split.train_ids)]
    val_utts = [by_id[i] for i in sorted(split.val_ids)]
    if not train_utts:
        raise TrainingError("training split is empty")
    if not val_utts:
        raise EmptyValidation("validation split is empty")

    if model_config is None:
        model_config = ModelConfig(
            feature_dim=train_utts[0].features.shape[1], vocab_size=vocab.size
        )
    model = init_model(model_config, seed=cfg.seed)
    state = TrainState(model=model, rng=np.random.default_rng(cfg.seed))

    # Phase 1: recognition head only, plain shuffled batches.
    for _ in range(cfg.warmup_epochs):
        order = state.rng.permutation(len(train_utts))
        for start in range(0, len(order), cfg.warmup_batch_size):
            chunk = [train_utts[i] for i in order[start: start + cfg.warmup_batch_size]]
            _warmup_step(state, chunk, cfg)

    # Phase 2: combined objective with ramp, step counter restarted at 0.
    batch_size = cfg.m_transcripts * cfg.k_utterances
    batches_per_epoch = max(1, math.ceil(len(train_utts) / batch_size))
    history: list[HistoryRow] = []
    best_params = copy_params(model)
    best_val = math.inf

    done = False
    while not done:
        state.epoch += 1
        last = None
        for _ in range(batches_per_epoch):
            if state.step >= cfg.t_max:
                done = True
                break
            ids = sample_balanced_batch(
                train_utts, cfg.m_transcripts, cfg.k_utterances, state.rng
            )
            batch = [by_id[i] for i in ids]
            lambda_t = ramp_weight(cfg, state.step) if cfg.mode == MODE_COMBINED else 0.0
            total, ctc_loss, supcon_loss, state = combined_step(state, batch, cfg)
            last = HistoryRow(
                step=state.step, epoch=state.epoch, loss=total,
                ctc_loss=ctc_loss, supcon_loss=supcon_loss, lambda_t=lambda_t,
            )
            if state.step % cfg.log_interval == 0:
                history.append(last)
        if last is None:
            break
        val = validation_loss(model, val_utts)
        if history and history[-1] is last:
            last.val_loss = val
        else:
            last = HistoryRow(
                step=state.step, epoch=state.epoch, loss=last.loss,
                ctc_loss=last.ctc_loss, supcon_loss=last.supcon_loss,
                lambda_t=last.lambda_t, val_loss=val,
            )
            history.append(last)
        if val < best_val:
            best_val = val
            best_params = copy_params(model)
            state.epochs_since_improvement = 0
        else:
            state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= cfg.patience:
                done = True
        state.best_val_loss = best_val

    set_named_params(model, best_params)
    return model, history


def write_history(history: list[HistoryRow], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("step,epoch,loss,ctc_loss,supcon_loss,lambda_t,val_loss\n")
        for row in history:
            val = "" if row.val_loss is None else repr(row.val_loss)
            fh.write(
                f"{row.step},{row.epoch},{row.loss!r},{row.ctc_loss!r},"
                f"{row.supcon_loss!r},{row.lambda_t!r},{val}\n"
            )
