"""Decoder targets from frame labels: run-length collapse, boundaries, masking, diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import groupby
from typing import Iterable, Sequence

import numpy as np

from .clustering import FrameLabelSequence
from .errors import AlreadyWrapped, EmptyInput, InvalidConfig

DEFAULT_SPAN_LENGTH = 10
DEFAULT_START_PROB = 0.065


@dataclass
class TargetSequence:
    utt_id: str
    tokens: list
    has_boundaries: bool = False


@dataclass(frozen=True)
class Vocabulary:
    """Cluster vocabulary plus special tokens placed after it."""

    base_size: int
    blank_id = 0

    @property
    def pad_id(self) -> int:
        return self.base_size

    @property
    def sos_id(self) -> int:
        return self.base_size + 1

    @property
    def eos_id(self) -> int:
        return self.base_size + 2

    @property
    def total_size(self) -> int:
        return self.base_size + 3


@dataclass
class MaskPlan:
    """Boolean per-frame mask built from fixed-length spans."""

    utt_id: str
    masked: np.ndarray
    span_length: int
    start_prob: float
    seed: int

    def __post_init__(self):
        self.masked = np.asarray(self.masked, dtype=bool)

    @property
    def num_frames(self) -> int:
        return len(self.masked)

    @property
    def masked_fraction(self) -> float:
        return float(self.masked.mean()) if len(self.masked) else 0.0


def collapse_ids(ids: Sequence) -> list:
    """Replace each run of identical consecutive IDs with a single ID."""
    return [key for key, _ in groupby(ids)]


def collapse_repeats(labels: FrameLabelSequence) -> TargetSequence:
    """Run-length collapse of frame labels into a decoder target sequence."""
    return TargetSequence(labels.utt_id, [int(t) for t in collapse_ids(labels.labels.tolist())])


def wrap_with_boundaries(target: TargetSequence, vocab: Vocabulary) -> TargetSequence:
    """Surround the tokens with start and end markers."""
    if target.has_boundaries:
        raise AlreadyWrapped(f"target {target.utt_id!r} already wrapped")
    tokens = [vocab.sos_id, *target.tokens, vocab.eos_id]
    return TargetSequence(target.utt_id, tokens, has_boundaries=True)


def span_mask(
    num_frames: int,
    span_length: int = DEFAULT_SPAN_LENGTH,
    start_prob: float = DEFAULT_START_PROB,
    seed: int = 0,
    utt_id: str = "",
) -> MaskPlan:
    """Draw span starts independently per frame and mask span_length frames from each.

    Spans may overlap and are truncated at the sequence end. Deterministic for
    a given seed.
    """
    if num_frames < 1:
        raise InvalidConfig(f"num_frames must be >= 1, got {num_frames}")
    if span_length < 1:
        raise InvalidConfig(f"span_length must be >= 1, got {span_length}")
    if not 0.0 < start_prob < 1.0:
        raise InvalidConfig(f"start_prob must be in (0, 1), got {start_prob}")
    rng = np.random.default_rng(seed)
    starts = rng.random(num_frames) < start_prob
    masked = np.zeros(num_frames, dtype=bool)
    for s in np.flatnonzero(starts):
        masked[s : s + span_length] = True
    return MaskPlan(utt_id, masked, span_length, start_prob, seed)


def _joint_counts(labels: Iterable[FrameLabelSequence]) -> dict:
    counts: dict = {}
    for seq in labels:
        if seq.channel is None:
            raise InvalidConfig(f"label sequence {seq.utt_id!r} carries no channel tag")
        for lab in seq.labels:
            key = (seq.channel, int(lab))
            counts[key] = counts.get(key, 0) + 1
    return counts


def channel_mutual_information(labels: Iterable[FrameLabelSequence]) -> float:
    """I(cluster ID; channel) in bits from empirical joint frequencies."""
    counts = _joint_counts(labels)
    total = sum(counts.values())
    if total == 0:
        raise EmptyInput("no frames in label collection")
    chan_totals: dict = {}
    id_totals: dict = {}
    for (chan, lab), n in counts.items():
        chan_totals[chan] = chan_totals.get(chan, 0) + n
        id_totals[lab] = id_totals.get(lab, 0) + n
    mi = 0.0
    for (chan, lab), n in counts.items():
        p_joint = n / total
        p_ind = (chan_totals[chan] / total) * (id_totals[lab] / total)
        mi += p_joint * math.log2(p_joint / p_ind)
    return mi


def channel_entropy(labels: Iterable[FrameLabelSequence]) -> float:
    """H(channel) in bits from empirical frame counts."""
    chan_totals: dict = {}
    total = 0
    for seq in labels:
        if seq.channel is None:
            raise InvalidConfig(f"label sequence {seq.utt_id!r} carries no channel tag")
        n = len(seq.labels)
        chan_totals[seq.channel] = chan_totals.get(seq.channel, 0) + n
        total += n
    if total == 0:
        raise EmptyInput("no frames in label collection")
    return -sum((n / total) * math.log2(n / total) for n in chan_totals.values() if n > 0)
