"""Matplotlib figures rendered next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .analysis import DispersionComparison
from .trainer import HistoryRow


def plot_history(history: list[HistoryRow], path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = [r.step for r in history]
    ax.plot(steps, [r.ctc_loss for r in history], label="ctc loss", lw=1.2)
    ax.plot(steps, [r.loss for r in history], label="total loss", lw=1.2, alpha=0.7)
    sup = [(r.step, r.supcon_loss) for r in history if r.supcon_loss != 0.0]
    if sup:
        ax.plot(*zip(*sup), label="supcon loss", lw=1.0, alpha=0.7)
    val = [(r.step, r.val_loss) for r in history if r.val_loss is not None]
    if val:
        ax.plot(*zip(*val), "o-", label="val ctc loss", ms=3)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_dispersion_pairs(
    pairs: list[tuple[str, float, float]], path: str, title: str | None = None
) -> None:
    """Scatter of per-transcript dispersion: baseline on x, regularized on y."""
    fig, ax = plt.subplots(figsize=(5, 5))
    xs = [da for _, da, _ in pairs]
    ys = [db for _, _, db in pairs]
    lim = max(xs + ys) * 1.05 if xs else 1.0
    ax.plot([0, lim], [0, lim], "k--", lw=0.8, alpha=0.5)
    ax.scatter(xs, ys, s=14, alpha=0.6)
    ax.set_xlim(0, lim)
    ax.set_ylim(0, lim)
    ax.set_xlabel("baseline dispersion")
    ax.set_ylabel("regularized dispersion")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_dispersion_comparison(comp: DispersionComparison, path: str) -> None:
    plot_dispersion_pairs(
        comp.per_transcript,
        path,
        title=(
            f"mean {comp.mean_a:.4f} -> {comp.mean_b:.4f} "
            f"({100 * comp.relative_reduction:.1f}% reduction)"
        ),
    )


def plot_wer_bars(rows: list[dict], path: str) -> None:
    """Grouped WER bars from experiment summary rows.

    Each row needs keys: condition, objective, greedy_wer, lm_wer.
    """
    conditions = sorted({r["condition"] for r in rows})
    objectives = ["ctc", "supcon"]
    width = 0.35
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, metric in zip(axes, ("greedy_wer", "lm_wer")):
        for k, obj in enumerate(objectives):
            vals = []
            for cond in conditions:
                match = [r[metric] for r in rows
                         if r["condition"] == cond and r["objective"] == obj]
                vals.append(sum(match) / len(match) if match else 0.0)
            xs = [i + (k - 0.5) * width for i in range(len(conditions))]
            ax.bar(xs, vals, width=width, label=obj)
        ax.set_xticks(range(len(conditions)))
        ax.set_xticklabels(conditions, rotation=45, ha="right", fontsize=8)
        ax.set_title(metric)
    axes[0].set_ylabel("WER")
    axes[0].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
