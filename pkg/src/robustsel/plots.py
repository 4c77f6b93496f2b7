"""Figure rendering for the report paths. Every CSV the CLI writes gets a
PNG sibling produced here."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_ig_removal(curves: dict[str, list[dict]], path: str, title: str = "Perturbation removal") -> None:
    """One panel per ranking mode: benign / same-wrong / new-wrong vs k."""
    fig, axes = plt.subplots(1, len(curves), figsize=(4 * len(curves), 3.2), sharey=True)
    if len(curves) == 1:
        axes = [axes]
    for ax, (mode, rows) in zip(axes, curves.items()):
        ks = [r["k"] for r in rows]
        ax.plot(ks, [r["benign"] for r in rows], "-", label="benign")
        ax.plot(ks, [r["same_wrong"] for r in rows], "--", label="same wrong")
        ax.plot(ks, [r["new_wrong"] for r in rows], ":", label="new wrong")
        ax.set_title(mode)
        ax.set_xlabel("features restored (k)")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("proportion")
    axes[0].legend(loc="center right", fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_history(steps: list[dict], path: str, window: int = 10) -> None:
    """Rolling-mean performance (1 - natural) and robustness (1 - gaussian)
    over training steps."""
    if not steps:
        return
    perf = np.array([1.0 - r["natural"] for r in steps])
    robust = np.array([1.0 - r["gaussian"] for r in steps])
    xs = np.arange(1, len(steps) + 1)
    if len(steps) >= window:
        kernel = np.ones(window) / window
        perf_s = np.convolve(perf, kernel, mode="valid")
        robust_s = np.convolve(robust, kernel, mode="valid")
        xs_s = xs[window - 1 :]
    else:
        perf_s, robust_s, xs_s = perf, robust, xs
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(xs_s, perf_s)
    ax1.set_title("performance (1 - natural error)")
    ax2.plot(xs_s, robust_s)
    ax2.set_title("robustness (1 - gaussian error)")
    for ax in (ax1, ax2):
        ax.set_xlabel("step")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metric_sweep(rows: list[dict], path: str, metric: str = "") -> None:
    ks = [r["k"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, [r["train_acc"] for r in rows], "-", label="train")
    ax.plot(ks, [r["test_acc"] for r in rows], "--", label="test")
    ax.plot(ks, [r["robust_acc"] for r in rows], ":", label="robust")
    ax.set_xlabel("features selected (k)")
    ax.set_ylabel("accuracy")
    ax.set_title(f"top-k sweep: {metric}" if metric else "top-k sweep")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_eval_report(rows: list[dict], path: str) -> None:
    """Grouped bars: benign / FGSM / PGD accuracy per method."""
    if not rows:
        return
    methods = [r["method"] for r in rows]
    x = np.arange(len(methods))
    width = 0.27
    fig, ax = plt.subplots(figsize=(1.6 * len(methods) + 3, 3.5))
    for offset, key, label in ((-width, "benign_acc", "benign"), (0, "fgsm_acc", "FGSM"), (width, "pgd_acc", "PGD")):
        vals = [r[key] for r in rows]
        errs = [r.get(key.replace("_acc", "_std"), 0.0) for r in rows]
        ax.bar(x + offset, vals, width, yerr=errs, capsize=2, label=label)
    ax.set_xticks(x, methods, rotation=20, ha="right")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3, axis="y")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
