"""PNG figures written next to the delimited data they are drawn from."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_decay(curves, path, title: str = "") -> Path:
    """Trace distance of every sampled state against the gap and MLSI envelopes."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for row in curves.distances:
        ax.semilogy(curves.times, row, color="0.7", lw=0.8)
    ax.semilogy(curves.times, curves.worst, color="C0", lw=1.8, label="worst sampled state")
    ax.semilogy(curves.times, curves.gap_envelope, color="C3", ls="--", label="gap envelope")
    if np.any(curves.mlsi_envelope < curves.mlsi_envelope[0]):
        ax.semilogy(curves.times, curves.mlsi_envelope, color="C2", ls=":",
                    label="MLSI envelope (indicative)")
    ax.set_xlabel("t")
    ax.set_ylabel("trace distance to the Gibbs state")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ds_decay(dists, deltas, bounds, path, title: str = "") -> Path:
    """Empirical DS constants and the analytic bound against the separation."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(dists, deltas, "o-", label="empirical")
    ax.semilogy(dists, bounds, "s--", label="analytic bound")
    ax.set_xlabel("dist(U, W)")
    ax.set_ylabel("max |ratio - 1|")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
