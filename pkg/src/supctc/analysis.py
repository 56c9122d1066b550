"""Within-transcript embedding dispersion analysis.

Embeddings are masked-mean-pooled encoder outputs, taken before the
projection head (the head is a training-time artifact). Dispersion of a
transcript is the mean pairwise cosine distance among its utterance
embeddings; only transcripts with at least two utterances participate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .corpus import Utterance
from .errors import AnalysisError
from .model import ModelParams
from .encoder import encode_batch
from .supcon import masked_mean_pool


class NoEligibleTranscripts(AnalysisError):
    """No transcript has two or more embeddings."""


class ZeroVector(AnalysisError):
    """Cosine distance is undefined for a zero embedding."""


class TranscriptSetMismatch(AnalysisError):
    """The two reports cover different transcript sets."""


@dataclass
class EmbeddingEntry:
    utt_id: str
    transcript_id: str
    accent_id: str
    speaker_id: str
    u: np.ndarray


@dataclass
class EmbeddingSet:
    entries: list[EmbeddingEntry]

    @property
    def dim(self) -> int:
        return self.entries[0].u.shape[0] if self.entries else 0


@dataclass
class DispersionReport:
    per_transcript: list[tuple[str, int, float]]  # (transcript_id, n, dispersion)
    mean: float
    median: float
    std: float
    num_transcripts: int


@dataclass
class DispersionComparison:
    per_transcript: list[tuple[str, float, float]]  # (transcript_id, before, after)
    mean_a: float
    mean_b: float
    relative_reduction: float
    fraction_reduced: float
    num_transcripts: int


def extract_embeddings(
    model: ModelParams, utterances: list[Utterance], chunk: int = 32
) -> EmbeddingSet:
    """Pooled encoder outputs per utterance; independent of batch grouping."""
    entries = []
    for start in range(0, len(utterances), chunk):
        part = utterances[start: start + chunk]
        reps = encode_batch(model.encoder, [u.features for u in part])
        frames = np.stack([rep.values for rep in reps])
        lens = np.array([rep.valid_len for rep in reps])
        pooled, _ = masked_mean_pool(frames, lens)
        for utt, u in zip(part, pooled):
            entries.append(
                EmbeddingEntry(
                    utt_id=utt.id, transcript_id=utt.transcript_id,
                    accent_id=utt.accent_id, speaker_id=utt.speaker_id, u=u,
                )
            )
    return EmbeddingSet(entries=entries)


def _dispersion_of(vectors: np.ndarray) -> float:
    norms = np.linalg.norm(vectors, axis=1)
    if (norms < 1e-12).any():
        raise ZeroVector("zero-norm embedding has no cosine distance")
    unit = vectors / norms[:, None]
    n = unit.shape[0]
    sims = unit @ unit.T
    # mean of (1 - cos) over unordered pairs
    return float(1.0 - (sims.sum() - n) / (n * (n - 1)))


def within_transcript_dispersion(embeddings: EmbeddingSet) -> DispersionReport:
    groups: dict[str, list[np.ndarray]] = {}
    for e in embeddings.entries:
        groups.setdefault(e.transcript_id, []).append(e.u)
    rows = []
    for transcript_id in sorted(groups):
        vecs = groups[transcript_id]
        if len(vecs) < 2:
            continue
        rows.append((transcript_id, len(vecs), _dispersion_of(np.stack(vecs))))
    if not rows:
        raise NoEligibleTranscripts("every transcript has fewer than two embeddings")
    values = np.array([d for _, _, d in rows])
    return DispersionReport(
        per_transcript=rows,
        mean=float(values.mean()),
        median=float(np.median(values)),
        std=float(values.std()),
        num_transcripts=len(rows),
    )


def compare_dispersion(a: DispersionReport, b: DispersionReport) -> DispersionComparison:
    map_a = {c: d for c, _, d in a.per_transcript}
    map_b = {c: d for c, _, d in b.per_transcript}
    if set(map_a) != set(map_b):
        raise TranscriptSetMismatch(
            f"reports cover different transcripts "
            f"({len(map_a)} vs {len(map_b)}, overlap {len(set(map_a) & set(map_b))})"
        )
    per = [(c, map_a[c], map_b[c]) for c in sorted(map_a)]
    reduced = sum(1 for _, da, db in per if db < da)
    rel = (a.mean - b.mean) / a.mean if a.mean != 0 else 0.0
    return DispersionComparison(
        per_transcript=per,
        mean_a=a.mean,
        mean_b=b.mean,
        relative_reduction=rel,
        fraction_reduced=reduced / len(per),
        num_transcripts=len(per),
    )


def write_embeddings_csv(embeddings: EmbeddingSet, path: str) -> None:
    dim = embeddings.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["utt_id", "transcript_id", "accent_id", "speaker_id"]
            + [f"u_{i}" for i in range(dim)]
        )
        for e in embeddings.entries:
            writer.writerow(
                [e.utt_id, e.transcript_id, e.accent_id, e.speaker_id]
                + [repr(float(x)) for x in e.u]
            )


def write_report_csv(report: DispersionReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["transcript_id", "n", "dispersion"])
        for c, n, d in report.per_transcript:
            writer.writerow([c, n, repr(d)])


def report_summary(report: DispersionReport) -> dict:
    return {
        "mean": report.mean,
        "median": report.median,
        "std": report.std,
        "n": report.num_transcripts,
    }


def write_report_summary(report: DispersionReport, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report_summary(report), fh, indent=2)
        fh.write("\n")


def write_comparison(comp: DispersionComparison, path: str) -> None:
    payload = {
        "mean_a": comp.mean_a,
        "mean_b": comp.mean_b,
        "relative_reduction": comp.relative_reduction,
        "fraction_reduced": comp.fraction_reduced,
        "n": comp.num_transcripts,
        "per_transcript": [
            {"transcript_id": c, "dispersion_a": da, "dispersion_b": db}
            for c, da, db in comp.per_transcript
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
