"""Command-line pipeline: generate, train, evaluate, analyze, experiment.

One JSON config drives everything; any corpus/model/train/decode field can be
overridden on the command line with --set key=value (dotted keys, JSON-typed
values). Exit codes: 0 success, 2 bad input or I/O, 3 training failure,
4 model/architecture mismatch, 5 analysis mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields, replace

from .analysis import (
    compare_dispersion,
    extract_embeddings,
    within_transcript_dispersion,
    write_comparison,
    write_embeddings_csv,
    write_report_csv,
    write_report_summary,
)
from .corpus import (
    CorpusSpec,
    UAProtocol,
    UTProtocol,
    check_split,
    generate_corpus,
    make_split,
    read_corpus,
    read_split,
    write_corpus,
    write_split,
)
from .errors import AnalysisError, DataError, ModelMismatchError, TrainingError
from .experiment import (
    DecodeConfig,
    ExperimentConfig,
    evaluate_model,
    run_experiment,
    train_split_lm,
    write_experiment_outputs,
)
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .trainer import MODE_CTC, MODE_COMBINED, TrainConfig, train, write_history

MODE_FLAGS = {"ctc": MODE_CTC, "supcon": MODE_COMBINED}


def _parse_set(entries: list[str]) -> dict:
    """--set key=value pairs into a nested dict; values parsed as JSON when possible."""
    tree: dict = {}
    for entry in entries:
        if "=" not in entry:
            raise DataError(f"--set expects key=value, got {entry!r}")
        key, raw = entry.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise DataError(f"--set key {key!r} conflicts with an earlier override")
        node[parts[-1]] = value
    return tree


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _build_section(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise DataError(f"config section {section!r} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise DataError(f"unknown {section} config fields: {sorted(unknown)}")
    if "transcript_len_range" in data and isinstance(data["transcript_len_range"], list):
        data = {**data, "transcript_len_range": tuple(data["transcript_len_range"])}
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad {section} config: {exc}")


def load_config(path: str | None, set_entries: list[str]) -> ExperimentConfig:
    base: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                base = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise DataError(f"config file is not valid JSON: {exc}")
        if not isinstance(base, dict):
            raise DataError("config file must hold a JSON object")
    merged = _merge(base, _parse_set(set_entries))

    corpus = _build_section(CorpusSpec, merged.pop("corpus", {}), "corpus")
    model = _build_section(ModelConfig, merged.pop("model", {}), "model")
    train_cfg = _build_section(TrainConfig, merged.pop("train", {}), "train")
    decode = _build_section(DecodeConfig, merged.pop("decode", {}), "decode")
    top = {
        "protocol": merged.pop("protocol", "ua"),
        "num_seeds": merged.pop("num_seeds", 3),
        "folds": merged.pop("folds", None),
        "accents": merged.pop("accents", None),
        "output_dir": merged.pop("output_dir", "results"),
    }
    if merged:
        raise DataError(f"unknown config fields: {sorted(merged)}")
    try:
        return ExperimentConfig(
            corpus=corpus, model=model, train=train_cfg, decode=decode, **top
        )
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad config: {exc}")


def _model_config_for(cfg: ExperimentConfig, feature_dim: int, vocab_size: int) -> ModelConfig:
    return replace(cfg.model, feature_dim=feature_dim, vocab_size=vocab_size)


def _check_model_fits_corpus(model, utterances, vocab) -> None:
    feature_dim = utterances[0].features.shape[1]
    if model.config.feature_dim != feature_dim:
        raise ModelMismatchError(
            f"checkpoint expects feature_dim {model.config.feature_dim}, "
            f"corpus has {feature_dim}"
        )
    if model.config.vocab_size != vocab.size:
        raise ModelMismatchError(
            f"checkpoint expects vocab_size {model.config.vocab_size}, "
            f"corpus has {vocab.size}"
        )


def _split_conditions(cfg: ExperimentConfig, protocol: str, utterances) -> list:
    if protocol == "ua":
        accents = cfg.accents or sorted({u.accent_id for u in utterances})
        return [(a, UAProtocol(held_out_accent=a)) for a in accents]
    n_spk = len({u.speaker_id for u in utterances if u.accent_id == utterances[0].accent_id})
    folds = cfg.folds if cfg.folds is not None else list(range(n_spk))
    return [(f"fold{f}", UTProtocol(fold=f)) for f in folds]


def cmd_generate(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg.corpus = replace(cfg.corpus, seed=args.seed)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)

    vocab, utterances = generate_corpus(cfg.corpus)
    corpus_path = os.path.join(out, "corpus.jsonl")
    write_corpus(vocab, utterances, corpus_path)

    protocol = args.protocol or cfg.protocol
    accents = sorted({u.accent_id for u in utterances})
    speakers = sorted({u.speaker_id for u in utterances})
    transcripts = sorted({u.transcript_id for u in utterances})
    print(f"corpus: {corpus_path}")
    print(
        f"  accents {len(accents)}  speakers {len(speakers)}  "
        f"transcripts {len(transcripts)}  utterances {len(utterances)}"
    )
    for name, proto in _split_conditions(cfg, protocol, utterances):
        plan = make_split(utterances, proto)
        check_split(utterances, plan)
        path = os.path.join(out, f"split_{protocol}_{name}.json")
        write_split(plan, path)
        by_id = {u.id: u for u in utterances}
        print(f"split {protocol}/{name}: {path}")
        for part, ids in (("train", plan.train_ids), ("val", plan.val_ids), ("test", plan.test_ids)):
            subset = [by_id[i] for i in ids]
            print(
                f"  {part:5s} utterances {len(ids):5d}  "
                f"transcripts {len({u.transcript_id for u in subset}):4d}  "
                f"speakers {len({u.speaker_id for u in subset}):3d}"
            )
    return 0


def _default_split_path(out: str, protocol: str) -> str:
    first = "accent0" if protocol == "ua" else "fold0"
    return os.path.join(out, f"split_{protocol}_{first}.json")


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    protocol = args.protocol or cfg.protocol

    corpus_path = args.corpus or os.path.join(out, "corpus.jsonl")
    split_path = args.split or _default_split_path(out, protocol)
    vocab, utterances = read_corpus(corpus_path)
    plan = read_split(split_path)

    mode = MODE_FLAGS[args.mode]
    train_cfg = replace(cfg.train, mode=mode)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    model_cfg = _model_config_for(cfg, utterances[0].features.shape[1], vocab.size)

    model, history = train(utterances, vocab, plan, train_cfg, model_cfg)
    ckpt_path = os.path.join(out, f"checkpoint_{args.mode}.json")
    save_checkpoint(model, ckpt_path)
    history_path = os.path.join(out, f"history_{args.mode}.csv")
    write_history(history, history_path)

    from .figures import plot_history

    plot_history(history, os.path.join(out, f"history_{args.mode}.png"))
    best = min((r.val_loss for r in history if r.val_loss is not None), default=float("nan"))
    print(f"checkpoint: {ckpt_path}")
    print(f"history: {history_path} ({len(history)} rows)")
    print(f"best val ctc loss: {best:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.set)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    protocol = args.protocol or cfg.protocol

    corpus_path = args.corpus or os.path.join(out, "corpus.jsonl")
    split_path = args.split or _default_split_path(out, protocol)
    vocab, utterances = read_corpus(corpus_path)
    plan = read_split(split_path)
    model = load_checkpoint(args.checkpoint)
    _check_model_fits_corpus(model, utterances, vocab)

    by_id = {u.id: u for u in utterances}
    test_utts = [by_id[i] for i in sorted(plan.test_ids)]
    lm = train_split_lm(utterances, plan, cfg.decode, vocab) if cfg.decode.use_lm else None
    summary, beam_rows = evaluate_model(model, test_utts, cfg.decode, lm)

    stem = os.path.splitext(os.path.basename(args.checkpoint))[0]
    json_path = os.path.join(out, f"eval_{stem}.json")
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    tsv_path = os.path.join(out, f"hyps_{stem}.tsv")
    with open(tsv_path, "w") as fh:
        for utt_id, tokens, score in beam_rows:
            fh.write(f"{utt_id}\t{' '.join(str(t) for t in tokens)}\t{score!r}\n")

    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(["greedy", "beam+lm" if cfg.decode.use_lm else "beam"],
           [summary["greedy_wer"], summary["lm_wer"]], color=["#888", "#4477aa"])
    ax.set_ylabel("WER")
    fig.tight_layout()
    fig.savefig(os.path.join(out, f"eval_{stem}.png"), dpi=120)
    plt.close(fig)

    print(f"greedy_wer: {summary['greedy_wer']:.4f}")
    print(f"lm_wer: {summary['lm_wer']:.4f}")
    print(f"wrote {json_path}, {tsv_path}")
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args.config, args.set)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    protocol = args.protocol or cfg.protocol

    corpus_path = args.corpus or os.path.join(out, "corpus.jsonl")
    split_path = args.split or _default_split_path(out, protocol)
    vocab, utterances = read_corpus(corpus_path)
    plan = read_split(split_path)
    by_id = {u.id: u for u in utterances}
    test_utts = [by_id[i] for i in sorted(plan.test_ids)]
    if args.split_b:
        plan_b = read_split(args.split_b)
        test_utts_b = [by_id[i] for i in sorted(plan_b.test_ids)]
    else:
        test_utts_b = test_utts

    model_a = load_checkpoint(args.checkpoint_a)
    model_b = load_checkpoint(args.checkpoint_b)
    _check_model_fits_corpus(model_a, utterances, vocab)
    _check_model_fits_corpus(model_b, utterances, vocab)
    emb_a = extract_embeddings(model_a, test_utts)
    emb_b = extract_embeddings(model_b, test_utts_b)
    report_a = within_transcript_dispersion(emb_a)
    report_b = within_transcript_dispersion(emb_b)
    comp = compare_dispersion(report_a, report_b)

    write_embeddings_csv(emb_a, os.path.join(out, "embeddings_a.csv"))
    write_embeddings_csv(emb_b, os.path.join(out, "embeddings_b.csv"))
    write_report_csv(report_a, os.path.join(out, "dispersion_a.csv"))
    write_report_csv(report_b, os.path.join(out, "dispersion_b.csv"))
    write_report_summary(report_a, os.path.join(out, "dispersion_a.json"))
    write_report_summary(report_b, os.path.join(out, "dispersion_b.json"))
    comp_path = os.path.join(out, "comparison.json")
    write_comparison(comp, comp_path)

    from .figures import plot_dispersion_comparison

    plot_dispersion_comparison(comp, os.path.join(out, "comparison.png"))
    print(
        f"dispersion mean {report_a.mean:.6f} -> {report_b.mean:.6f} "
        f"(relative reduction {comp.relative_reduction:.4f}, "
        f"fraction reduced {comp.fraction_reduced:.3f})"
    )
    print(f"wrote {comp_path}")
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.protocol:
        cfg.protocol = args.protocol
    out = args.out or cfg.output_dir
    root_seed = args.seed if args.seed is not None else 0
    cfg.corpus = replace(cfg.corpus, seed=root_seed)

    results = run_experiment(cfg, root_seed=root_seed, jobs=args.jobs)
    aggregate = write_experiment_outputs(cfg, results, out)

    wer = aggregate["wer"]
    print(f"protocol: {cfg.protocol}  conditions x seeds: {len(results)}")
    for objective in ("ctc", "supcon"):
        print(
            f"  {objective:6s} greedy_wer {wer[objective]['greedy_wer']:.4f}  "
            f"lm_wer {wer[objective]['lm_wer']:.4f}"
        )
    print(
        f"  dispersion mean {aggregate['dispersion_mean']['ctc']:.6f} -> "
        f"{aggregate['dispersion_mean']['supcon']:.6f} "
        f"(relative reduction {aggregate['dispersion_relative_reduction']:.4f})"
    )
    print(f"outputs in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="supctc",
        description="Contrastive-regularized CTC recognizer on a synthetic multi-accent corpus",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="root seed override")
        p.add_argument("--out", help="output directory (default from config)")
        p.add_argument("--protocol", choices=["ut", "ua"], help="split protocol")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="config override, e.g. --set train.t_max=500",
        )

    p_gen = sub.add_parser("generate", help="generate corpus and split files")
    common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", help="train one model on one split")
    common(p_train)
    p_train.add_argument("--mode", choices=sorted(MODE_FLAGS), required=True)
    p_train.add_argument("--corpus", help="corpus file (default <out>/corpus.jsonl)")
    p_train.add_argument("--split", help="split file (default first condition in <out>)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="decode a test split and score WER")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--corpus")
    p_eval.add_argument("--split")
    p_eval.set_defaults(func=cmd_evaluate)

    p_an = sub.add_parser("analyze", help="compare embedding dispersion of two checkpoints")
    common(p_an)
    p_an.add_argument("--checkpoint-a", required=True, dest="checkpoint_a")
    p_an.add_argument("--checkpoint-b", required=True, dest="checkpoint_b")
    p_an.add_argument("--corpus")
    p_an.add_argument("--split")
    p_an.add_argument("--split-b", dest="split_b",
                      help="separate test split for the second checkpoint")
    p_an.set_defaults(func=cmd_analyze)

    p_exp = sub.add_parser("experiment", help="full baseline-vs-regularized comparison")
    common(p_exp)
    p_exp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ModelMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
