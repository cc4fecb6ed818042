"""Report figures. Rendered headless and written as PNG next to the JSON outputs."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path, stamp: str | None) -> None:
    # no Software/date chunk, so identical data gives identical bytes
    meta = {"Software": None}
    if stamp:
        meta["Description"] = stamp
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=meta)
    plt.close(fig)


def comment_distribution(histogram: Mapping[int, int], fit, path, stamp: str | None = None) -> None:
    """Log-log scatter of comments-per-post frequencies with the fitted line."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        pts = sorted((v, f) for v, f in histogram.items() if v > 0 and f > 0)
        if pts:
            x, y = zip(*pts)
            ax.scatter(x, y, s=10, color="0.2", label="posts")
            if fit is not None:
                xs = np.array([min(x), max(x)], dtype=float)
                ax.plot(xs, 2.0 ** (fit.intercept + fit.slope * np.log2(xs)), color="C3", lw=1.2,
                        label=f"slope {fit.slope:.2f}, $R^2$ {fit.r2:.2f}")
                ax.legend(frameon=False)
            ax.set_xscale("log", base=2)
            ax.set_yscale("log", base=2)
        ax.set_xlabel("comments per post")
        ax.set_ylabel("number of posts")
        _save(fig, path, stamp)


def noise_bars(fractions: Mapping[str, float], path, title: str = "lexical noise",
               stamp: str | None = None) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        names = list(fractions)
        ax.bar(range(len(names)), [fractions[n] for n in names], color="0.35")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("fraction of tokens")
        ax.set_ylim(0, 1)
        ax.set_title(title)
        _save(fig, path, stamp)


def lf_accuracy_heatmap(alpha: np.ndarray, classes: Sequence[str], lf_ids: Sequence[str], path,
                        stamp: str | None = None) -> None:
    """Fitted accuracy per class (rows) and labeling function (columns)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 0.7 * len(lf_ids), 1.0 + 0.3 * len(classes)))
        im = ax.imshow(alpha, vmin=0, vmax=1, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(lf_ids)))
        ax.set_xticklabels(lf_ids, rotation=40, ha="right")
        ax.set_yticks(range(len(classes)))
        ax.set_yticklabels(classes)
        fig.colorbar(im, ax=ax, label="estimated accuracy")
        _save(fig, path, stamp)


def metric_bars(reports: Mapping[str, Mapping[str, float]], metrics: Sequence[str], path,
                title: str = "", stamp: str | None = None) -> None:
    """Grouped bars, one group per metric and one bar per system."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(metrics) + 1.5), 3.0))
        systems = list(reports)
        width = 0.8 / max(1, len(systems))
        x = np.arange(len(metrics))
        for i, name in enumerate(systems):
            vals = [reports[name].get(m) or 0.0 for m in metrics]
            ax.bar(x + (i - (len(systems) - 1) / 2) * width, vals, width, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(metrics, rotation=30, ha="right")
        ax.set_ylim(0, 1)
        if len(systems) > 1:
            ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        _save(fig, path, stamp)


def loss_curve(losses: Sequence[float], path, stamp: str | None = None) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.plot(range(1, len(losses) + 1), losses, marker="o", ms=3, color="0.2")
        ax.set_xlabel("epoch")
        ax.set_ylabel("noise-aware loss")
        _save(fig, path, stamp)
