"""Matplotlib figures written next to the text/CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .reports import EVAL_ORDER, CorpusStats, display_name  # noqa: E402

# keep PNG bytes free of version strings
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_corpus_stats(stats: CorpusStats, path) -> Path:
    labels = [r.label for r in stats.rows]
    hours = [r.length_h for r in stats.rows]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    bars = ax.bar(labels, hours, color="#4c72b0")
    for b, r in zip(bars, stats.rows):
        ax.annotate(f"{r.pct:.1f}%", (b.get_x() + b.get_width() / 2, b.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("hours")
    ax.set_title("Duration by dialect region")
    ax.tick_params(axis="x", rotation=30)
    return _save(fig, path)


def plot_metric_report(report, path) -> Path:
    metrics = ("wer", "bleu", "sim", "did")
    models = report.model_tags
    dialects = [d for d in EVAL_ORDER if any(r.dialect == d for r in report.rows)] + [None]
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.5), sharey=False)
    x = np.arange(len(dialects))
    width = 0.8 / max(1, len(models))
    for ax, m in zip(axes, metrics):
        for k, tag in enumerate(models):
            vals = []
            for d in dialects:
                try:
                    v = getattr(report.row(d, tag), m)
                except KeyError:
                    v = None
                vals.append(np.nan if v is None else v)
            ax.bar(x + k * width - 0.4 + width / 2, vals, width, label=tag)
        ax.set_xticks(x)
        ax.set_xticklabels([display_name(d) for d in dialects], rotation=60, fontsize=8)
        ax.set_title(m.upper())
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def plot_mos_report(report, path) -> Path:
    from .evaluation import RATING_FIELDS

    rows = sorted(report.rows, key=lambda r: (r.scenario, r.model_tag))
    fig, axes = plt.subplots(1, len(RATING_FIELDS), figsize=(4 * len(RATING_FIELDS), 3.5))
    labels = [f"{r.scenario}\n{r.model_tag}" for r in rows]
    for ax, f in zip(axes, RATING_FIELDS):
        means = [r.scores[f].mean if r.scores.get(f) else np.nan for r in rows]
        stds = [r.scores[f].std if r.scores.get(f) else 0.0 for r in rows]
        ax.bar(range(len(rows)), means, yerr=stds, capsize=3, color="#55a868")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, fontsize=7, rotation=45)
        ax.set_title(f.upper() if f != "intelligibility" else "Intelligibility")
    return _save(fig, path)
