"""Contrastive-regularized CTC sequence recognition on a synthetic multi-accent corpus."""

__version__ = "0.1.0"

from .corpus import (
    CorpusSpec,
    SplitPlan,
    UAProtocol,
    UTProtocol,
    Utterance,
    Vocabulary,
    generate_corpus,
    make_split,
    read_corpus,
    write_corpus,
)
from .ctc import (
    DecodeResult,
    Posteriorgram,
    beam_search_decode,
    brute_force_ctc,
    ctc_logits,
    ctc_loss_and_grad,
    greedy_decode,
    wer_summary,
    word_error_rate,
)
from .lm import NGramModel, next_token_logprob, score_sequence, train_lm
from .model import ModelConfig, ModelParams, init_model, load_checkpoint, save_checkpoint
from .supcon import masked_mean_pool, project_and_normalize, supcon_loss_and_grad, valid_mask
from .trainer import TrainConfig, combined_step, ramp_weight, sample_balanced_batch, train
from .analysis import (
    DispersionReport,
    compare_dispersion,
    extract_embeddings,
    within_transcript_dispersion,
)

__all__ = [
    "CorpusSpec", "SplitPlan", "UAProtocol", "UTProtocol", "Utterance", "Vocabulary",
    "generate_corpus", "make_split", "read_corpus", "write_corpus",
    "DecodeResult", "Posteriorgram", "beam_search_decode", "brute_force_ctc",
    "ctc_logits", "ctc_loss_and_grad", "greedy_decode", "wer_summary", "word_error_rate",
    "NGramModel", "next_token_logprob", "score_sequence", "train_lm",
    "ModelConfig", "ModelParams", "init_model", "load_checkpoint", "save_checkpoint",
    "masked_mean_pool", "project_and_normalize", "supcon_loss_and_grad",
    "valid_mask",
    "TrainConfig", "combined_step", "ramp_weight", "sample_balanced_batch", "train",
    "DispersionReport", "compare_dispersion", "extract_embeddings",
    "within_transcript_dispersion",
]
