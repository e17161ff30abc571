"""Report figures rendered straight to PNG files; no interactive backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# strip the Software tag so repeated renders are byte-identical
_PNG_META = {"metadata": {"Software": None}}


def save_spectrogram_png(path, grid_db: np.ndarray, rate_hz: int, hop_ms: float) -> None:
    """Time-frequency heatmap of a dB spectrogram grid (frames x bins)."""
    grid = np.asarray(grid_db, dtype=np.float64)
    t_max = grid.shape[0] * hop_ms / 1000.0
    fig, ax = plt.subplots(figsize=(8, 4), dpi=100)
    im = ax.imshow(
        grid.T,
        origin="lower",
        aspect="auto",
        extent=(0.0, t_max, 0.0, rate_hz / 2.0),
        cmap="magma",
    )
    ax.set_xlabel("time [s]")
    ax.set_ylabel("frequency [Hz]")
    fig.colorbar(im, ax=ax, label="power [dB]")
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)


def save_inertia_png(path, histories: dict) -> None:
    """Convergence curves, one line per fitted codebook."""
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    positive = True
    for name, history in histories.items():
        ax.plot(range(len(history)), history, marker="o", markersize=3, label=name)
        positive = positive and all(v > 0 for v in history)
    ax.set_xlabel("iteration")
    ax.set_ylabel("inertia")
    if positive and histories:
        ax.set_yscale("log")
    if histories:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)


def save_id_usage_png(path, counts_by_channel: dict, vocab_size: int) -> None:
    """Per-channel histogram of emitted cluster IDs over the shared vocabulary."""
    fig, ax = plt.subplots(figsize=(8, 4), dpi=100)
    ids = np.arange(vocab_size)
    for channel, counts in counts_by_channel.items():
        heights = np.zeros(vocab_size)
        for i, c in counts.items():
            if 0 <= i < vocab_size:
                heights[i] = c
        ax.bar(ids, heights, width=1.0, alpha=0.6, label=channel)
    ax.set_xlabel("cluster ID")
    ax.set_ylabel("frames")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_PNG_META)
    plt.close(fig)
