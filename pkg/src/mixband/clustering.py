"""Lloyd's k-means and the channel-aware pooled codebook with non-overlapping IDs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import NARROW, WIDE
from .dsp import FeatureMatrix
from .errors import (
    DimensionMismatch,
    InsufficientData,
    InvalidConfig,
    OffsetTooSmall,
)

# points per accumulation chunk; chunks are reduced sequentially by index so
# results do not depend on scheduling
CHUNK = 4096
CONVERGENCE_RTOL = 1e-7


@dataclass
class Codebook:
    """K x D centroid matrix with its channel tag and fit diagnostics."""

    centroids: np.ndarray
    channel: str = "pooled"
    seed: int = 0
    inertia_history: list = field(default_factory=list)
    empty_cluster_reseeds: int = 0
    standardize_mean: np.ndarray | None = None
    standardize_scale: np.ndarray | None = None

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise InvalidConfig(f"centroids must be K x D with K >= 1, got {self.centroids.shape}")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class PooledCodebook:
    """Wide and narrow codebooks sharing one ID space, narrow IDs offset upward."""

    wide: Codebook
    narrow: Codebook
    offset: int

    def __post_init__(self):
        if self.offset < self.wide.k:
            raise OffsetTooSmall(f"offset {self.offset} below wide cluster count {self.wide.k}")

    @property
    def vocab_size(self) -> int:
        return self.offset + self.narrow.k

    @property
    def feature_dim(self) -> int:
        return self.wide.feature_dim


@dataclass
class FrameLabelSequence:
    """Per-frame cluster IDs for one utterance."""

    utt_id: str
    labels: np.ndarray
    channel: str | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)


def _as_rows(features) -> np.ndarray:
    rows = features.rows if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    if rows.ndim != 2:
        raise InvalidConfig(f"features must be 2-D, got shape {rows.shape}")
    return rows


def _prepped_rows(codebook: Codebook, features) -> np.ndarray:
    rows = _as_rows(features)
    if rows.shape[1] != codebook.feature_dim:
        raise DimensionMismatch(
            f"feature dim {rows.shape[1]} != codebook dim {codebook.feature_dim}"
        )
    if codebook.standardize_mean is not None:
        rows = (rows - codebook.standardize_mean) / codebook.standardize_scale
    return rows


def _labels_and_distances(rows: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row by squared distance, ties to the lowest index."""
    n = rows.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    k, d = centroids.shape
    # exact differences, sub-chunked to bound the n*k*d intermediate
    step = max(1, min(CHUNK, 8_000_000 // max(1, k * d)))
    for start in range(0, n, step):
        block = rows[start : start + step]
        d2 = np.sum((block[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels[start : start + step] = np.argmin(d2, axis=1)
        dists[start : start + step] = d2[np.arange(len(block)), labels[start : start + step]]
    return labels, dists


def _kmeans_pp_init(rows: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty((k, rows.shape[1]), dtype=np.float64)
    centroids[0] = rows[rng.integers(len(rows))]
    d2 = np.sum((rows - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            pick = min(pick, len(rows) - 1)
        else:
            pick = int(rng.integers(len(rows)))
        centroids[i] = rows[pick]
        d2 = np.minimum(d2, np.sum((rows - centroids[i]) ** 2, axis=1))
    return centroids


def _update_centroids(
    rows: np.ndarray, labels: np.ndarray, d2: np.ndarray, centroids: np.ndarray
) -> tuple[np.ndarray, int]:
    """One Lloyd update; empty clusters are re-seeded from the farthest points."""
    k = centroids.shape[0]
    sums = np.zeros_like(centroids)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    for start in range(0, len(rows), CHUNK):
        np.add.at(sums, labels[start : start + CHUNK], rows[start : start + CHUNK])
    occupied = counts > 0
    centroids = np.where(occupied[:, None], sums / np.maximum(counts, 1.0)[:, None], centroids)

    reseeds = 0
    if not occupied.all():
        # farthest points claim the empty clusters, one each
        order = np.argsort(-d2, kind="stable")
        next_far = 0
        for j in np.flatnonzero(~occupied):
            centroids[j] = rows[order[next_far]]
            next_far += 1
            reseeds += 1
    return centroids, reseeds


def kmeans_fit(
    features,
    k: int,
    max_iters: int = 100,
    seed: int = 0,
    channel: str = "pooled",
    standardize: bool = False,
) -> Codebook:
    """Lloyd's k-means with k-means++ initialization.

    Iterates until max_iters or until the relative inertia improvement drops
    below 1e-7. Centroid sums accumulate in float64 over fixed-order chunks of
    4096 points, so refits with the same seed are byte-reproducible. Empty
    clusters are re-seeded from the point farthest from its centroid.
    """
    rows = _as_rows(features)
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    if max_iters < 1:
        raise InvalidConfig(f"max_iters must be >= 1, got {max_iters}")
    if len(rows) < k:
        raise InsufficientData(f"{len(rows)} points for k={k}")

    mean = scale = None
    if standardize:
        mean = rows.mean(axis=0)
        scale = rows.std(axis=0)
        scale[scale == 0] = 1.0
        rows = (rows - mean) / scale

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(rows, k, rng)
    history: list[float] = []
    reseeds = 0

    for _ in range(max_iters):
        labels, d2 = _labels_and_distances(rows, centroids)
        inertia = float(d2.sum())
        history.append(inertia)
        if len(history) > 1 and history[-2] - inertia < CONVERGENCE_RTOL * history[-2]:
            break
        if inertia == 0.0:
            break

        centroids, new_reseeds = _update_centroids(rows, labels, d2, centroids)
        reseeds += new_reseeds

    return Codebook(
        centroids=centroids,
        channel=channel,
        seed=seed,
        inertia_history=history,
        empty_cluster_reseeds=reseeds,
        standardize_mean=mean,
        standardize_scale=scale,
    )


def assign(codebook: Codebook, features, channel: str | None = None) -> FrameLabelSequence:
    """Label every frame with its nearest centroid index."""
    rows = _prepped_rows(codebook, features)
    labels, _ = _labels_and_distances(rows, codebook.centroids)
    utt_id = features.source_utt_id if isinstance(features, FeatureMatrix) else ""
    if channel is None and codebook.channel in (WIDE, NARROW):
        channel = codebook.channel
    return FrameLabelSequence(utt_id, labels, channel)


def inertia(codebook: Codebook, features) -> float:
    """Sum of squared distances from each frame to its assigned centroid."""
    rows = _prepped_rows(codebook, features)
    _, d2 = _labels_and_distances(rows, codebook.centroids)
    return float(d2.sum())


def pool_codebooks(wide: Codebook, narrow: Codebook, offset="auto") -> PooledCodebook:
    """Combine per-channel codebooks into one ID space.

    Narrow IDs start at offset, which must be at least wide.k so the two
    ranges never overlap; "auto" uses exactly wide.k.
    """
    if wide.feature_dim != narrow.feature_dim:
        raise DimensionMismatch(
            f"wide dim {wide.feature_dim} != narrow dim {narrow.feature_dim}"
        )
    if offset == "auto":
        offset = wide.k
    if not isinstance(offset, (int, np.integer)) or isinstance(offset, bool):
        raise InvalidConfig(f"offset must be an integer or 'auto', got {offset!r}")
    return PooledCodebook(wide=wide, narrow=narrow, offset=int(offset))


def assign_channel_aware(
    pooled: PooledCodebook, features, channel: str
) -> FrameLabelSequence:
    """Label frames against the codebook of their channel.

    Wide frames keep raw centroid indices; narrow frames get the pool offset
    added, so emitted IDs identify the channel.
    """
    if channel == WIDE:
        seq = assign(pooled.wide, features, channel=WIDE)
        return seq
    if channel == NARROW:
        seq = assign(pooled.narrow, features, channel=NARROW)
        seq.labels = seq.labels + pooled.offset
        return seq
    raise InvalidConfig(f"channel must be wide or narrow, got {channel!r}")
