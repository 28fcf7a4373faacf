"""Matplotlib renders written next to the delimited metric files.

Every report path of the CLI pairs a CSV with a PNG: training curves,
marginal bars, rank histograms, and generation frequencies.  PNG output
carries no timestamps, so figure bytes are reproducible too.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "nmln"})
    plt.close(fig)


def save_training_curves(rows: list[dict], path) -> None:
    """Data score, residual magnitude, and gradient norms per epoch."""
    if not rows:
        return
    epochs = [r["epoch"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    axes[0].plot(epochs, [r["data_score"] for r in rows], lw=1)
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("data score")
    axes[1].plot(epochs, [r["residual_max"] for r in rows], lw=1, color="tab:red")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("max |data - model| statistic")
    axes[1].set_yscale("log")
    for key in sorted(rows[0]):
        if key.startswith("grad_norm"):
            axes[2].plot(
                epochs, [r[key] for r in rows], lw=1, label=key.removeprefix("grad_norm_")
            )
    axes[2].set_xlabel("epoch")
    axes[2].set_ylabel("gradient norm")
    axes[2].set_yscale("log")
    axes[2].legend(fontsize=7)
    _save(fig, path)


def save_marginals(marginals: np.ndarray, labels: list[str], path) -> None:
    """Horizontal bar chart of per-atom probabilities."""
    n = len(marginals)
    fig, ax = plt.subplots(figsize=(6, max(2.0, 0.18 * n)))
    ax.barh(np.arange(n), marginals, color="tab:blue")
    ax.set_yticks(np.arange(n))
    ax.set_yticklabels(labels, fontsize=6)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("P(atom)")
    _save(fig, path)


def save_rank_histogram(ranks: list[float], path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3))
    top = max(int(max(ranks)) + 1, 2) if ranks else 2
    ax.hist(ranks, bins=np.arange(0.5, top + 1.0, 1.0), color="tab:green")
    ax.set_xlabel("rank of test fact")
    ax.set_ylabel("count")
    _save(fig, path)


def save_frequencies(labels: list[str], counts: list[int], path) -> None:
    fig, ax = plt.subplots(figsize=(6, max(2.0, 0.3 * len(labels))))
    ax.barh(np.arange(len(labels)), counts, color="tab:purple")
    ax.set_yticks(np.arange(len(labels)))
    ax.set_yticklabels(labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("sample count")
    _save(fig, path)


def save_potential_bars(values: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(np.arange(len(values)), values, color="tab:orange")
    ax.set_xlabel("potential index")
    ax.set_ylabel("global potential")
    _save(fig, path)
