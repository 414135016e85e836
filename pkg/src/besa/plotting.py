"""Report figures written to files (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_eval_record(record, path):
    """Bar chart of each metric across cases, one panel per metric."""
    keys = [k for k in ("mse", "hausdorff", "chamfer", "varifold_sq")
            if any(k in c for c in record.cases)]
    names = [c["name"] for c in record.cases]
    fig, axes = plt.subplots(1, len(keys), figsize=(3.2 * len(keys), 3.0), squeeze=False)
    for ax, key in zip(axes[0], keys):
        vals = [c.get(key, np.nan) for c in record.cases]
        ax.bar(np.arange(len(vals)), vals, color="0.4")
        ax.set_title(key)
        ax.set_xticks(np.arange(len(vals)))
        ax.set_xticklabels(names, rotation=90, fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_optimizer_history(report, path):
    """Objective against iteration, one line per stage, on a log scale."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    offset = 0
    for i, stage in enumerate(report.stages):
        h = np.asarray(stage.history, dtype=float)
        if h.size == 0:
            continue
        x = offset + np.arange(h.size)
        lam = stage.params.get("lambda")
        label = f"stage {i}" + (f" (lambda={lam:.0e})" if lam is not None else "")
        ax.semilogy(x, np.maximum(h, 1e-300), label=label)
        offset += h.size
    ax.set_xlabel("accepted iterate")
    ax.set_ylabel("objective")
    ax.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_spectrum(spectra: dict, path):
    """Singular value spectra of the tangent samples (log scale)."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, s in spectra.items():
        s = np.asarray(s, dtype=float)
        ax.semilogy(np.arange(1, s.size + 1), np.maximum(s, 1e-300), marker=".", label=label)
    ax.set_xlabel("component")
    ax.set_ylabel("singular value")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
