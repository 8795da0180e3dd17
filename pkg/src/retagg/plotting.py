"""Figure rendering for CLI reports.

Consumes the same artifacts the CLI writes to disk (heatmap rows,
explanation reports, training history), so anything visible in a
figure is reproducible from the delimited output next to it. Uses the
Agg backend; nothing here opens a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from retagg.dataset import Channel
from retagg.explain import ExplanationReport

_PNG_METADATA = {"Software": "retagg"}  # constant metadata keeps output bytes stable across runs


def render_explanation_figure(
    report: ExplanationReport,
    channel: Channel,
    heatmap_rows: list[tuple[int, int, float, float]],
    path: str | Path,
) -> None:
    """Raw signal, window probability heatmap, and influence weights in one figure.

    Leaderboard (top-contribution) windows are shaded on the signal
    panel so the localization is visible against the raw trace.
    """
    starts = np.array([r[0] for r in heatmap_rows])
    ends = np.array([r[1] for r in heatmap_rows])
    probs = np.array([r[2] for r in heatmap_rows])
    weights = np.array([r[3] for r in heatmap_rows])
    centers = (starts + ends) / 2.0

    fig, axes = plt.subplots(3, 1, figsize=(10, 7), sharex=True, gridspec_kw={"height_ratios": [2, 1, 1]})

    ax = axes[0]
    ax.plot(np.arange(channel.length), channel.values, color="0.3", linewidth=0.5)
    for k in report.leaderboards:
        start = k * report.stride
        ax.axvspan(start, start + report.window_length, color="tab:orange", alpha=0.25, linewidth=0)
    ax.set_ylabel("signal")
    ax.set_title(
        f"{report.series_id}: class {report.predicted_class} "
        f"(p1={report.series_probs[1]:.3f}, metric={report.metric}, "
        f"m={report.m}, tau={report.temperature:g})"
    )

    ax = axes[1]
    ax.fill_between(centers, probs, step="mid", color="tab:red", alpha=0.6)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("window p(class 1)")

    ax = axes[2]
    ax.fill_between(centers, weights, step="mid", color="tab:blue", alpha=0.6)
    ax.set_ylabel("weight")
    ax.set_xlabel("sample" if report.fs is None else f"sample (fs={report.fs:g} Hz)")

    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)


def render_history_figure(history: list[dict], path: str | Path) -> None:
    """Training loss and validation metrics per epoch."""
    epochs = [h["epoch"] for h in history]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)

    ax1.plot(epochs, [h["train_loss_mean"] for h in history], marker="o", color="tab:blue")
    ax1.set_ylabel("train loss")

    ax2.plot(epochs, [h["val_f1"] for h in history], marker="o", label="val F1")
    ax2.plot(epochs, [h["val_acc"] for h in history], marker="s", label="val acc")
    aucs = [(h["epoch"], h["val_auc"]) for h in history if h["val_auc"] is not None]
    if aucs:
        ax2.plot([e for e, _ in aucs], [a for _, a in aucs], marker="^", label="val AUC")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("metric")
    ax2.legend(loc="lower right")

    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)
