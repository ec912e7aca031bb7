"""Figure and CSV rendering for training and evaluation reports."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def save_training_curves(metrics: list[dict], path: str) -> str:
    """Loss and validation perplexity vs. epoch, one panel each."""
    epochs = [m["epoch"] for m in metrics]
    loss = [m["train_loss"] for m in metrics]
    ppl_points = [(m["epoch"], m["valid_ppl"]) for m in metrics if m.get("valid_ppl") is not None]

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(epochs, loss, marker="o", ms=3)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("train loss")
    axes[0].grid(alpha=0.3)
    if ppl_points:
        axes[1].plot([p[0] for p in ppl_points], [p[1] for p in ppl_points],
                     marker="o", ms=3, color="tab:orange")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("valid perplexity")
    axes[1].grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_metrics_csv(metrics: list[dict], path: str) -> str:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "valid_ppl", "kl_mean"])
        writer.writeheader()
        for rec in metrics:
            writer.writerow({k: rec.get(k) for k in writer.fieldnames})
    return path


def save_coherence_figure(coherence: dict, path: str) -> str:
    """Per-topic NPMI bars with the mean marked."""
    per_topic = coherence["per_topic"]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(per_topic) + 2), 3.2))
    ax.bar(range(len(per_topic)), per_topic, color="tab:blue")
    ax.axhline(coherence["mean"], color="tab:red", ls="--", lw=1,
               label=f"mean {coherence['mean']:.3f}")
    ax.set_xlabel("topic")
    ax.set_ylabel("NPMI")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_coherence_csv(coherence: dict, path: str) -> str:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic", "npmi", "top_words"])
        for k, score in enumerate(coherence["per_topic"]):
            words = coherence.get("top_words", [])
            writer.writerow([k, score, " ".join(words[k]) if k < len(words) else ""])
    return path


def render_eval_figures(report: dict, out_dir: str) -> list[str]:
    """Figures plus delimited data for one evaluation report."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if report.get("coherence"):
        written.append(save_coherence_figure(report["coherence"], os.path.join(out_dir, "coherence.png")))
        written.append(save_coherence_csv(report["coherence"], os.path.join(out_dir, "coherence.csv")))
    return written


def render_train_figures(metrics: list[dict], out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    return [
        save_training_curves(metrics, os.path.join(out_dir, "training_curves.png")),
        save_metrics_csv(metrics, os.path.join(out_dir, "metrics.csv")),
    ]
