"""End-to-end comparison experiment: baseline vs contrastive regularization.

For every condition (held-out accent, or cross-validation fold) and every
seed, one task trains both objectives on the same split, decodes the test
set greedily and with beam+LM, and compares within-transcript dispersion of
the two encoders. Tasks are independent, so they can run in worker
processes; results are keyed and sorted, making output files identical
regardless of parallelism.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context

import numpy as np

from .analysis import (
    compare_dispersion,
    extract_embeddings,
    within_transcript_dispersion,
)
from .corpus import (
    CorpusSpec,
    SplitPlan,
    UAProtocol,
    UTProtocol,
    Utterance,
    Vocabulary,
    generate_corpus,
    make_split,
)
from .ctc import beam_search_decode, ctc_logits, greedy_decode, wer_summary
from .encoder import encode_batch
from .lm import NGramModel, train_lm
from .model import ModelConfig
from .trainer import MODE_CTC, MODE_COMBINED, TrainConfig, train


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: int = 16
    lm_order: int = 4
    lm_smoothing_k: float = 0.1
    lm_weight: float = 0.5
    word_bonus: float = 0.0
    use_lm: bool = True

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.lm_order < 1:
            raise ValueError("lm_order must be >= 1")


@dataclass
class ExperimentConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    protocol: str = "ua"
    num_seeds: int = 3
    folds: list[int] | None = None  # ut only; None = every fold
    accents: list[str] | None = None  # ua only; None = every accent
    output_dir: str = "results"

    def __post_init__(self):
        if self.protocol not in ("ut", "ua"):
            raise ValueError("protocol must be ut or ua")
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be >= 1")


def derive_seed(root: int, *key: int) -> int:
    """Counter-style expansion of the root seed into independent run seeds."""
    return int(np.random.SeedSequence([root, *key]).generate_state(1)[0])


def decode_test_set(
    model, utterances: list[Utterance], decode_cfg: DecodeConfig, lm: NGramModel | None
):
    """Greedy and beam hypotheses for every utterance, in input order."""
    greedy_rows = []
    beam_rows = []
    for utt in utterances:
        rep = encode_batch(model.encoder, [utt.features])[0]
        post = ctc_logits(model.ctc, rep)
        g = greedy_decode(post)
        greedy_rows.append((utt.id, g.tokens, g.score))
        b = beam_search_decode(
            post,
            beam_width=decode_cfg.beam_width,
            lm=lm if decode_cfg.use_lm else None,
            lm_weight=decode_cfg.lm_weight if decode_cfg.use_lm else 0.0,
            word_bonus=decode_cfg.word_bonus,
        )
        beam_rows.append((utt.id, b.tokens, b.score))
    return greedy_rows, beam_rows


def evaluate_model(
    model, utterances: list[Utterance], decode_cfg: DecodeConfig, lm: NGramModel | None
) -> tuple[dict, list]:
    greedy_rows, beam_rows = decode_test_set(model, utterances, decode_cfg, lm)
    refs = [utt.tokens for utt in utterances]
    greedy = wer_summary(refs, [hyp for _, hyp, _ in greedy_rows])
    beam = wer_summary(refs, [hyp for _, hyp, _ in beam_rows])
    summary = {"greedy_wer": greedy["wer"], "lm_wer": beam["wer"]}
    return summary, beam_rows


def train_split_lm(
    utterances: list[Utterance], split: SplitPlan, decode_cfg: DecodeConfig,
    vocab: Vocabulary | None = None,
) -> NGramModel:
    """N-gram model over the training transcripts.

    The token inventory is pinned to the full vocabulary so fusion can score
    any token the decoder proposes, seen in training or not.
    """
    train_ids = split.train_ids
    transcripts = sorted({u.tokens for u in utterances if u.id in train_ids})
    token_space = None if vocab is None else range(1, vocab.size)
    return train_lm(
        transcripts, decode_cfg.lm_order, decode_cfg.lm_smoothing_k, vocab=token_space
    )


@dataclass
class ConditionResult:
    protocol: str
    condition: str
    seed_index: int
    wer: dict[str, dict]  # objective -> {greedy_wer, lm_wer}
    dispersion_mean: dict[str, float]  # objective -> mean dispersion
    relative_reduction: float
    fraction_reduced: float
    pairs: list[tuple[str, float, float]]  # per-transcript (id, base, regularized)


def _run_condition(task: dict) -> ConditionResult:
    cfg: ExperimentConfig = task["config"]
    condition = task["condition"]
    seed_index = task["seed_index"]
    root_seed = task["root_seed"]

    vocab, utterances = generate_corpus(cfg.corpus)
    if cfg.protocol == "ua":
        split = make_split(utterances, UAProtocol(held_out_accent=condition))
        cond_key = task["condition_index"]
    else:
        split = make_split(utterances, UTProtocol(fold=int(condition.removeprefix("fold"))))
        cond_key = task["condition_index"]

    by_id = {u.id: u for u in utterances}
    test_utts = [by_id[i] for i in sorted(split.test_ids)]
    lm = train_split_lm(utterances, split, cfg.decode, vocab) if cfg.decode.use_lm else None

    model_cfg = replace(
        cfg.model, feature_dim=cfg.corpus.feature_dim, vocab_size=vocab.size
    )
    wer: dict[str, dict] = {}
    models = {}
    for obj_index, (objective, mode) in enumerate(
        (("ctc", MODE_CTC), ("supcon", MODE_COMBINED))
    ):
        run_seed = derive_seed(root_seed, cond_key, seed_index, obj_index)
        train_cfg = replace(cfg.train, mode=mode, seed=run_seed)
        model, _ = train(utterances, vocab, split, train_cfg, model_cfg)
        summary, _ = evaluate_model(model, test_utts, cfg.decode, lm)
        wer[objective] = summary
        models[objective] = model

    report_ctc = within_transcript_dispersion(extract_embeddings(models["ctc"], test_utts))
    report_sup = within_transcript_dispersion(extract_embeddings(models["supcon"], test_utts))
    comp = compare_dispersion(report_ctc, report_sup)
    return ConditionResult(
        protocol=cfg.protocol,
        condition=condition,
        seed_index=seed_index,
        wer=wer,
        dispersion_mean={"ctc": report_ctc.mean, "supcon": report_sup.mean},
        relative_reduction=comp.relative_reduction,
        fraction_reduced=comp.fraction_reduced,
        pairs=comp.per_transcript,
    )


def _conditions(cfg: ExperimentConfig) -> list[str]:
    if cfg.protocol == "ua":
        if cfg.accents is not None:
            return list(cfg.accents)
        return [f"accent{a}" for a in range(cfg.corpus.num_accents)]
    folds = cfg.folds if cfg.folds is not None else list(range(cfg.corpus.speakers_per_accent))
    return [f"fold{f}" for f in folds]


def run_experiment(
    cfg: ExperimentConfig, root_seed: int = 0, jobs: int = 1
) -> list[ConditionResult]:
    conditions = _conditions(cfg)
    tasks = [
        {
            "config": cfg,
            "condition": cond,
            "condition_index": ci,
            "seed_index": si,
            "root_seed": root_seed,
        }
        for ci, cond in enumerate(conditions)
        for si in range(cfg.num_seeds)
    ]
    if jobs <= 1 or len(tasks) == 1:
        results = [_run_condition(t) for t in tasks]
    else:
        ctx = get_context("fork")
        with ctx.Pool(processes=min(jobs, len(tasks))) as pool:
            results = pool.map(_run_condition, tasks)
    results.sort(key=lambda r: (r.condition, r.seed_index))
    return results


def write_experiment_outputs(
    cfg: ExperimentConfig, results: list[ConditionResult], out_dir: str
) -> dict:
    """Consolidated CSVs, dispersion summary, and figures; returns aggregates."""
    os.makedirs(out_dir, exist_ok=True)

    rows = []
    for r in results:
        for objective in ("ctc", "supcon"):
            rows.append(
                {
                    "protocol": r.protocol,
                    "condition": r.condition,
                    "seed": r.seed_index,
                    "objective": objective,
                    "greedy_wer": r.wer[objective]["greedy_wer"],
                    "lm_wer": r.wer[objective]["lm_wer"],
                }
            )
    rows.sort(key=lambda row: (row["protocol"], row["condition"], row["seed"], row["objective"]))
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["protocol", "condition", "seed", "objective", "greedy_wer", "lm_wer"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "greedy_wer": repr(row["greedy_wer"]),
                             "lm_wer": repr(row["lm_wer"])})

    aggregates: dict[str, dict] = {}
    for objective in ("ctc", "supcon"):
        sub = [row for row in rows if row["objective"] == objective]
        aggregates[objective] = {
            "greedy_wer": sum(r["greedy_wer"] for r in sub) / len(sub),
            "lm_wer": sum(r["lm_wer"] for r in sub) / len(sub),
        }
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["protocol", "objective", "greedy_wer", "lm_wer"])
        for objective in ("ctc", "supcon"):
            agg = aggregates[objective]
            writer.writerow(
                [cfg.protocol, objective, repr(agg["greedy_wer"]), repr(agg["lm_wer"])]
            )

    with open(os.path.join(out_dir, "dispersion.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["protocol", "condition", "seed", "mean_ctc", "mean_supcon",
             "relative_reduction", "fraction_reduced"]
        )
        for r in results:
            writer.writerow(
                [r.protocol, r.condition, r.seed_index,
                 repr(r.dispersion_mean["ctc"]), repr(r.dispersion_mean["supcon"]),
                 repr(r.relative_reduction), repr(r.fraction_reduced)]
            )

    disp_means = {
        "ctc": sum(r.dispersion_mean["ctc"] for r in results) / len(results),
        "supcon": sum(r.dispersion_mean["supcon"] for r in results) / len(results),
    }
    mean_fraction = sum(r.fraction_reduced for r in results) / len(results)
    aggregate = {
        "protocol": cfg.protocol,
        "wer": aggregates,
        "dispersion_mean": disp_means,
        "dispersion_relative_reduction": (
            (disp_means["ctc"] - disp_means["supcon"]) / disp_means["ctc"]
            if disp_means["ctc"] != 0 else 0.0
        ),
        "fraction_reduced": mean_fraction,
        "config": {
            "corpus": asdict(cfg.corpus),
            "model": asdict(cfg.model),
            "train": asdict(cfg.train),
            "decode": asdict(cfg.decode),
            "protocol": cfg.protocol,
            "num_seeds": cfg.num_seeds,
        },
    }
    with open(os.path.join(out_dir, "aggregate.json"), "w") as fh:
        json.dump(aggregate, fh, indent=2)
        fh.write("\n")

    from .figures import plot_dispersion_pairs, plot_wer_bars

    plot_wer_bars(rows, os.path.join(out_dir, "wer.png"))
    pairs = [p for r in results for p in r.pairs]
    plot_dispersion_pairs(pairs, os.path.join(out_dir, "dispersion.png"))
    return aggregate
