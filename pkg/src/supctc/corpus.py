"""Synthetic multi-accent corpus: data model, generation, splits, and file I/O.

The corpus imitates a read-speech collection in which every speaker of every
accent reads the same set of transcripts. Token identities are carried by
prototype vectors; accents add a per-token shift, speakers a smaller per-token
jitter, and each emitted frame gets independent Gaussian noise. All randomness
flows from a single seed, so a (spec, seed) pair pins the corpus bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

BLANK = 0
BLANK_SYMBOL = "<blank>"


class InsufficientData(DataError):
    """Corpus too small for the requested split protocol."""


class MalformedRecord(DataError):
    """A corpus file line that cannot be parsed or violates an invariant."""

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number


@dataclass(frozen=True)
class Vocabulary:
    """Token inventory; index 0 is always the CTC blank."""

    symbols: tuple[str, ...]

    blank_index: int = BLANK

    def __post_init__(self):
        if self.blank_index != 0:
            raise ValueError("blank_index must be 0")
        if len(self.symbols) < 2:
            raise ValueError("vocabulary needs at least blank plus one token")
        if self.symbols[0] != BLANK_SYMBOL:
            raise ValueError(f"symbol 0 must be {BLANK_SYMBOL!r}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("symbols must be unique")

    @property
    def size(self) -> int:
        return len(self.symbols)


@dataclass
class Utterance:
    """One sample: features plus token labels and grouping metadata."""

    id: str
    speaker_id: str
    accent_id: str
    transcript_id: str
    tokens: tuple[int, ...]
    features: np.ndarray  # (raw_frames, feature_dim) float64

    @property
    def raw_frames(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class CorpusSpec:
    """Knobs of the synthetic generator. All counts >= 1, scales >= 0."""

    num_accents: int = 6
    speakers_per_accent: int = 4
    num_transcripts: int = 60
    transcript_len_range: tuple[int, int] = (3, 8)
    frames_per_token: int = 4
    frame_jitter: int = 1
    feature_dim: int = 16
    accent_shift_scale: float = 1.0
    speaker_jitter_scale: float = 0.2
    noise_scale: float = 0.15
    seed: int = 0
    # Non-blank token count; the generated Vocabulary has vocab_size + 1 symbols.
    vocab_size: int = 12

    def __post_init__(self):
        counts = (
            self.num_accents,
            self.speakers_per_accent,
            self.num_transcripts,
            self.frames_per_token,
            self.feature_dim,
            self.vocab_size,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        lo, hi = self.transcript_len_range
        if lo < 1 or lo > hi:
            raise ValueError("transcript_len_range must satisfy 1 <= min <= max")
        if self.frame_jitter < 0:
            raise ValueError("frame_jitter must be >= 0")
        scales = (self.accent_shift_scale, self.speaker_jitter_scale, self.noise_scale)
        if any(s < 0 for s in scales):
            raise ValueError("scales must be >= 0")


@dataclass(frozen=True)
class UTProtocol:
    """Unseen-transcript split: hold out one speaker per accent and a transcript subset."""

    fold: int
    num_folds: int | None = None  # defaults to speakers per accent
    test_transcript_fraction: float = 0.1


@dataclass(frozen=True)
class UAProtocol:
    """Unseen-accent split: hold out one entire accent group."""

    held_out_accent: str


Protocol = UTProtocol | UAProtocol


@dataclass(frozen=True)
class SplitPlan:
    protocol: Protocol
    train_ids: frozenset[str]
    val_ids: frozenset[str]
    test_ids: frozenset[str]

    def subset(self, utterances: list[Utterance], which: str) -> list[Utterance]:
        ids = {"train": self.train_ids, "val": self.val_ids, "test": self.test_ids}[which]
        return [u for u in utterances if u.id in ids]


def generate_corpus(spec: CorpusSpec) -> tuple[Vocabulary, list[Utterance]]:
    """Generate the synthetic corpus.

    Every speaker of every accent reads every transcript, so the result has
    num_accents * speakers_per_accent * num_transcripts utterances. Frame
    values are prototype + accent shift + speaker jitter + Gaussian noise.
    """
    rng = np.random.default_rng(spec.seed)
    n_tok = spec.vocab_size
    f_dim = spec.feature_dim

    vocab = Vocabulary(
        symbols=(BLANK_SYMBOL,) + tuple(f"w{i:02d}" for i in range(n_tok))
    )

    prototypes = rng.standard_normal((n_tok, f_dim))
    accent_shift = rng.standard_normal((spec.num_accents, n_tok, f_dim)) * spec.accent_shift_scale
    speaker_jitter = (
        rng.standard_normal((spec.num_accents, spec.speakers_per_accent, n_tok, f_dim))
        * spec.speaker_jitter_scale
    )

    lo, hi = spec.transcript_len_range
    transcripts: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    attempts = 0
    while len(transcripts) < spec.num_transcripts:
        attempts += 1
        if attempts > 1000 * spec.num_transcripts:
            raise InsufficientData(
                "token space too small for the requested number of distinct transcripts"
            )
        length = int(rng.integers(lo, hi + 1))
        tokens = tuple(int(t) for t in rng.integers(1, n_tok + 1, size=length))
        if tokens in seen:
            continue  # transcript ids must map 1:1 onto token sequences
        if any(a == b for a, b in zip(tokens, tokens[1:])):
            # adjacent repeats need an extra separating frame per repeat,
            # which short utterances cannot promise after temporal striding
            continue
        seen.add(tokens)
        transcripts.append(tokens)

    utterances: list[Utterance] = []
    for a in range(spec.num_accents):
        accent_id = f"accent{a}"
        for s in range(spec.speakers_per_accent):
            speaker_id = f"{accent_id}_spk{s}"
            base = prototypes + accent_shift[a] + speaker_jitter[a, s]  # (n_tok, F)
            for t_idx, tokens in enumerate(transcripts):
                transcript_id = f"tr{t_idx:03d}"
                blocks = []
                for tok in tokens:
                    n = spec.frames_per_token + int(
                        rng.integers(-spec.frame_jitter, spec.frame_jitter + 1)
                    )
                    n = max(1, n)
                    noise = rng.standard_normal((n, f_dim)) * spec.noise_scale
                    blocks.append(base[tok - 1] + noise)
                utterances.append(
                    Utterance(
                        id=f"{speaker_id}_{transcript_id}",
                        speaker_id=speaker_id,
                        accent_id=accent_id,
                        transcript_id=transcript_id,
                        tokens=tokens,
                        features=np.concatenate(blocks, axis=0),
                    )
                )
    return vocab, utterances


def _group_by(utterances: list[Utterance], key) -> dict[str, list[Utterance]]:
    groups: dict[str, list[Utterance]] = {}
    for u in utterances:
        groups.setdefault(key(u), []).append(u)
    return groups


def make_split(utterances: list[Utterance], protocol: Protocol) -> SplitPlan:
    """Build a SplitPlan for the UT or UA protocol.

    UT holds out one speaker per accent plus a transcript subset; utterances
    that would leak held-out speakers or test transcripts into training are
    excluded from all three sets. UA assigns the held-out accent entirely to
    test and covers the corpus. Validation is always carved from the training
    side by transcript (10% of its transcripts, rounded up).
    """
    if isinstance(protocol, UAProtocol):
        return _make_ua_split(utterances, protocol)
    if isinstance(protocol, UTProtocol):
        return _make_ut_split(utterances, protocol)
    raise TypeError(f"unknown protocol {protocol!r}")


def _make_ua_split(utterances: list[Utterance], protocol: UAProtocol) -> SplitPlan:
    by_accent = _group_by(utterances, lambda u: u.accent_id)
    if len(by_accent) < 2:
        raise InsufficientData("UA protocol needs at least 2 accents")
    if protocol.held_out_accent not in by_accent:
        raise InsufficientData(f"accent {protocol.held_out_accent!r} not in corpus")

    test_ids = {u.id for u in by_accent[protocol.held_out_accent]}
    rest = [u for u in utterances if u.accent_id != protocol.held_out_accent]

    transcript_ids = sorted({u.transcript_id for u in rest})
    order = list(transcript_ids)
    np.random.default_rng(0).shuffle(order)
    n_val = math.ceil(0.1 * len(order))
    val_transcripts = set(order[:n_val])

    val_ids = {u.id for u in rest if u.transcript_id in val_transcripts}
    train_ids = {u.id for u in rest if u.transcript_id not in val_transcripts}
    return SplitPlan(protocol, frozenset(train_ids), frozenset(val_ids), frozenset(test_ids))


def _make_ut_split(utterances: list[Utterance], protocol: UTProtocol) -> SplitPlan:
    by_accent = _group_by(utterances, lambda u: u.accent_id)
    speakers_by_accent = {
        a: sorted({u.speaker_id for u in utts}) for a, utts in by_accent.items()
    }
    if any(len(spk) < 2 for spk in speakers_by_accent.values()):
        raise InsufficientData("UT protocol needs at least 2 speakers per accent")

    held_out = {
        a: spk[protocol.fold % len(spk)] for a, spk in speakers_by_accent.items()
    }
    held_out_speakers = set(held_out.values())

    transcript_ids = sorted({u.transcript_id for u in utterances})
    order = list(transcript_ids)
    np.random.default_rng(protocol.fold).shuffle(order)
    n_test = max(1, math.ceil(protocol.test_transcript_fraction * len(order)))
    if n_test >= len(order):
        raise InsufficientData("not enough transcripts to carve a UT test set")
    test_transcripts = set(order[:n_test])
    remaining = order[n_test:]
    n_val = math.ceil(0.1 * len(remaining))
    val_transcripts = set(remaining[:n_val])
    train_transcripts = set(remaining[n_val:])
    if not train_transcripts:
        raise InsufficientData("not enough transcripts to form a UT train set")

    train_ids, val_ids, test_ids = set(), set(), set()
    for u in utterances:
        if u.speaker_id in held_out_speakers:
            if u.transcript_id in test_transcripts:
                test_ids.add(u.id)
            # held-out speakers reading train/val transcripts are unused
        elif u.transcript_id in train_transcripts:
            train_ids.add(u.id)
        elif u.transcript_id in val_transcripts:
            val_ids.add(u.id)
        # training speakers reading test transcripts are unused
    return SplitPlan(protocol, frozenset(train_ids), frozenset(val_ids), frozenset(test_ids))


def check_split(utterances: list[Utterance], plan: SplitPlan) -> None:
    """Raise DataError if the plan violates a SplitPlan invariant."""
    by_id = {u.id: u for u in utterances}
    sets = (plan.train_ids, plan.val_ids, plan.test_ids)
    for name, ids in zip(("train", "val", "test"), sets):
        unknown = ids - by_id.keys()
        if unknown:
            raise DataError(f"{name} references unknown utterance ids: {sorted(unknown)[:3]}")
    if plan.train_ids & plan.val_ids or plan.train_ids & plan.test_ids or plan.val_ids & plan.test_ids:
        raise DataError("split sets are not pairwise disjoint")

    def meta(ids, attr):
        return {getattr(by_id[i], attr) for i in ids}

    if isinstance(plan.protocol, UAProtocol):
        covered = plan.train_ids | plan.val_ids | plan.test_ids
        if covered != by_id.keys():
            raise DataError("UA split must cover the corpus")
        held = plan.protocol.held_out_accent
        if meta(plan.test_ids, "accent_id") != {held}:
            raise DataError("UA test set must contain exactly the held-out accent")
        if held in meta(plan.train_ids, "accent_id") | meta(plan.val_ids, "accent_id"):
            raise DataError("held-out accent leaked into train/val")
    else:
        accents = {u.accent_id for u in utterances}
        if meta(plan.train_ids, "accent_id") != accents or meta(plan.test_ids, "accent_id") != accents:
            raise DataError("UT split must keep every accent in train and test")
        if meta(plan.train_ids, "transcript_id") & meta(plan.test_ids, "transcript_id"):
            raise DataError("UT split leaks transcripts between train and test")
        test_speakers = meta(plan.test_ids, "speaker_id")
        if test_speakers & (meta(plan.train_ids, "speaker_id") | meta(plan.val_ids, "speaker_id")):
            raise DataError("held-out speakers leaked into train/val")


def write_corpus(vocab: Vocabulary, utterances: list[Utterance], path: str | Path) -> None:
    """Write the corpus as JSON-lines; floats keep full round-trip precision."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {"version": 1, "vocab": list(vocab.symbols), "feature_dim": _feature_dim(utterances)}
        fh.write(json.dumps(header) + "\n")
        for u in utterances:
            record = {
                "id": u.id,
                "speaker": u.speaker_id,
                "accent": u.accent_id,
                "transcript_id": u.transcript_id,
                "tokens": list(u.tokens),
                "features": u.features.tolist(),
            }
            fh.write(json.dumps(record) + "\n")


def _feature_dim(utterances: list[Utterance]) -> int:
    return utterances[0].features.shape[1] if utterances else 0


def read_corpus(path: str | Path) -> tuple[Vocabulary, list[Utterance]]:
    """Read a corpus file written by write_corpus; validates every record."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedRecord(1, "missing header")
    try:
        header = json.loads(lines[0])
        vocab = Vocabulary(symbols=tuple(header["vocab"]))
        feature_dim = int(header["feature_dim"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(1, f"bad header: {exc}") from None

    utterances: list[Utterance] = []
    tokens_of_transcript: dict[str, tuple[int, ...]] = {}
    transcript_of_tokens: dict[tuple[int, ...], str] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            tokens = tuple(int(t) for t in rec["tokens"])
            features = np.array(rec["features"], dtype=np.float64)
            utt = Utterance(
                id=rec["id"],
                speaker_id=rec["speaker"],
                accent_id=rec["accent"],
                transcript_id=rec["transcript_id"],
                tokens=tokens,
                features=features,
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(line_no, str(exc)) from None
        if not tokens:
            raise MalformedRecord(line_no, "empty token sequence")
        if any(t < 1 or t >= vocab.size for t in tokens):
            raise MalformedRecord(line_no, "token index out of range")
        if features.ndim != 2 or features.shape[1] != feature_dim or features.shape[0] < 1:
            raise MalformedRecord(line_no, "feature matrix shape mismatch")
        if not np.all(np.isfinite(features)):
            raise MalformedRecord(line_no, "non-finite feature value")
        prior = tokens_of_transcript.setdefault(utt.transcript_id, tokens)
        if prior != tokens:
            raise MalformedRecord(line_no, f"transcript {utt.transcript_id} has inconsistent tokens")
        owner = transcript_of_tokens.setdefault(tokens, utt.transcript_id)
        if owner != utt.transcript_id:
            raise MalformedRecord(line_no, "identical tokens under two transcript ids")
        utterances.append(utt)
    return vocab, utterances


def write_split(plan: SplitPlan, path: str | Path) -> None:
    if isinstance(plan.protocol, UAProtocol):
        proto = {"kind": "ua", "held_out_accent": plan.protocol.held_out_accent}
    else:
        proto = {
            "kind": "ut",
            "fold": plan.protocol.fold,
            "num_folds": plan.protocol.num_folds,
            "test_transcript_fraction": plan.protocol.test_transcript_fraction,
        }
    payload = {
        "protocol": proto,
        "train_ids": sorted(plan.train_ids),
        "val_ids": sorted(plan.val_ids),
        "test_ids": sorted(plan.test_ids),
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def read_split(path: str | Path) -> SplitPlan:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        proto_raw = payload["protocol"]
        if proto_raw["kind"] == "ua":
            protocol: Protocol = UAProtocol(held_out_accent=proto_raw["held_out_accent"])
        else:
            protocol = UTProtocol(
                fold=int(proto_raw["fold"]),
                num_folds=proto_raw.get("num_folds"),
                test_transcript_fraction=float(proto_raw.get("test_transcript_fraction", 0.1)),
            )
        return SplitPlan(
            protocol=protocol,
            train_ids=frozenset(payload["train_ids"]),
            val_ids=frozenset(payload["val_ids"]),
            test_ids=frozenset(payload["test_ids"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad split file {path}: {exc}") from None
