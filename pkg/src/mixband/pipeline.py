"""End-to-end labeling pipeline: manifest in, codebooks/labels/targets/masks/report out.

Every artifact is a pure function of (config, manifest contents, input audio),
so two runs with the same seed write byte-identical files.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import plotting
from .audio import CHANNEL_RATES, WIDE_RATE, load_wav, resample
from .clustering import (
    assign,
    assign_channel_aware,
    kmeans_fit,
    pool_codebooks,
)
from .dsp import MelFilterbankConfig, logmel, spectrogram_db
from .errors import ChannelMismatch, EmptyInput, InvalidConfig, MalformedFile
from .formats import (
    UtteranceRecord,
    dump_json,
    save_codebook,
    save_label_file,
    save_manifest,
    save_mask_file,
)
from .labeling import (
    Vocabulary,
    channel_entropy,
    channel_mutual_information,
    collapse_repeats,
    span_mask,
    wrap_with_boundaries,
)

log = logging.getLogger(__name__)

MODES = ("pooled_baseline", "channel_aware")


@dataclass
class PipelineConfig:
    """Everything a labeling run depends on, minus the manifest and output dir."""

    mode: str = "channel_aware"
    k_wide: int = 500
    k_narrow: int = 500
    k_pooled: int = 1000
    offset: object = "auto"
    max_iters: int = 100
    standardize: bool = False
    span_length: int = 10
    start_prob: float = 0.065
    wrap_targets: bool = False
    alpha: float = 0.5
    beta: float = 0.3
    seed: int = 0
    emit_figures: bool = True
    feature: MelFilterbankConfig = field(default_factory=MelFilterbankConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "channel_aware":
            if self.k_wide < 1 or self.k_narrow < 1:
                raise InvalidConfig("channel_aware needs k_wide >= 1 and k_narrow >= 1")
        elif self.k_pooled < 1:
            raise InvalidConfig("pooled_baseline needs k_pooled >= 1")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {v}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["feature"] = asdict(self.feature)
        return d


def config_from_dict(d: dict) -> PipelineConfig:
    """Build a config from parsed JSON, rejecting unknown keys."""
    if not isinstance(d, dict):
        raise InvalidConfig("config must be a JSON object")
    known = {f for f in PipelineConfig.__dataclass_fields__}
    extra = set(d) - known
    if extra:
        raise InvalidConfig(f"unknown config fields: {sorted(extra)}")
    kwargs = dict(d)
    if "feature" in kwargs:
        feat = kwargs["feature"]
        feat_known = set(MelFilterbankConfig.__dataclass_fields__)
        feat_extra = set(feat) - feat_known
        if feat_extra:
            raise InvalidConfig(f"unknown feature config fields: {sorted(feat_extra)}")
        kwargs["feature"] = MelFilterbankConfig(**feat)
    return PipelineConfig(**kwargs)


def _load_features(rec: UtteranceRecord, cfg: PipelineConfig, base_dir=None):
    path = Path(rec.path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    buf = load_wav(path)
    want_rate = CHANNEL_RATES.get(rec.channel)
    if want_rate is None:
        raise InvalidConfig(f"{rec.utt_id}: unknown channel {rec.channel!r}")
    if buf.sample_rate_hz != want_rate:
        raise ChannelMismatch(
            f"{rec.utt_id}: manifest says {rec.channel} ({want_rate} Hz) "
            f"but {rec.path} is {buf.sample_rate_hz} Hz"
        )
    # all clustering features live on the wide-band rate grid
    if buf.sample_rate_hz != WIDE_RATE:
        buf = resample(buf, WIDE_RATE)
    feats = logmel(buf, cfg.feature)
    feats.source_utt_id = rec.utt_id
    return buf, feats


def _fit_codebooks(cfg: PipelineConfig, records, features):
    if cfg.mode == "pooled_baseline":
        stacked = np.vstack([f.rows for f in features])
        book = kmeans_fit(
            stacked, cfg.k_pooled, max_iters=cfg.max_iters, seed=cfg.seed,
            channel="pooled", standardize=cfg.standardize,
        )
        return book, book.k, {"pooled": book.inertia_history}
    wide_rows = [f.rows for r, f in zip(records, features) if r.channel == "wide"]
    narrow_rows = [f.rows for r, f in zip(records, features) if r.channel == "narrow"]
    if not wide_rows or not narrow_rows:
        raise InvalidConfig("channel_aware mode needs utterances from both channels")
    wide = kmeans_fit(
        np.vstack(wide_rows), cfg.k_wide, max_iters=cfg.max_iters, seed=cfg.seed,
        channel="wide", standardize=cfg.standardize,
    )
    narrow = kmeans_fit(
        np.vstack(narrow_rows), cfg.k_narrow, max_iters=cfg.max_iters, seed=cfg.seed + 1,
        channel="narrow", standardize=cfg.standardize,
    )
    pooled = pool_codebooks(wide, narrow, cfg.offset)
    histories = {"wide": wide.inertia_history, "narrow": narrow.inertia_history}
    return pooled, pooled.vocab_size, histories


def _label_one(book, cfg: PipelineConfig, rec: UtteranceRecord, feats):
    if cfg.mode == "pooled_baseline":
        seq = assign(book, feats, channel=rec.channel)
    else:
        seq = assign_channel_aware(book, feats, rec.channel)
    seq.utt_id = rec.utt_id
    return seq


def mutual_information_report(label_seqs, vocab_size: int) -> dict:
    ids_by_channel: dict = {}
    frames_by_channel: dict = {}
    for seq in label_seqs:
        ids_by_channel.setdefault(seq.channel, set()).update(int(v) for v in seq.labels)
        frames_by_channel[seq.channel] = frames_by_channel.get(seq.channel, 0) + len(seq.labels)
    channels = sorted(ids_by_channel)
    overlap = set.intersection(*ids_by_channel.values()) if len(channels) > 1 else set()
    return {
        "mi_bits": channel_mutual_information(label_seqs),
        "h_channel_bits": channel_entropy(label_seqs),
        "vocab_size": vocab_size,
        "num_utterances": len(label_seqs),
        "frames_per_channel": {c: frames_by_channel[c] for c in channels},
        "unique_ids_per_channel": {c: len(ids_by_channel[c]) for c in channels},
        "id_overlap_count": len(overlap),
    }


def run_label_pipeline(cfg: PipelineConfig, manifest, out_dir, base_dir=None) -> dict:
    """Fit codebooks, label every utterance, and write the artifact set.

    Relative audio paths resolve against base_dir (usually the manifest's
    directory). Returns a report dict summarizing the run; all files land
    under out_dir.
    """
    records = list(manifest)
    if not records:
        raise EmptyInput("manifest lists no utterances")
    seen = set()
    for rec in records:
        if rec.utt_id in seen:
            raise MalformedFile(f"duplicate utt_id {rec.utt_id!r} in manifest")
        seen.add(rec.utt_id)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    buffers = []
    features = []
    for rec in records:
        buf, feats = _load_features(rec, cfg, base_dir)
        buffers.append(buf)
        features.append(feats)
        log.info("features %s: %d frames", rec.utt_id, feats.num_frames)

    book, vocab_size, histories = _fit_codebooks(cfg, records, features)

    label_seqs = [_label_one(book, cfg, rec, f) for rec, f in zip(records, features)]

    targets = [collapse_repeats(seq) for seq in label_seqs]
    if cfg.wrap_targets:
        vocab = Vocabulary(vocab_size)
        targets = [wrap_with_boundaries(t, vocab) for t in targets]

    masks = [
        span_mask(
            f.num_frames,
            span_length=cfg.span_length,
            start_prob=cfg.start_prob,
            seed=cfg.seed + i,
            utt_id=rec.utt_id,
        )
        for i, (rec, f) in enumerate(zip(records, features))
    ]

    mi_report = mutual_information_report(label_seqs, vocab_size)

    records_out = [
        replace(rec, num_frames=f.num_frames) for rec, f in zip(records, features)
    ]

    save_codebook(out / "codebook.json", book)
    save_label_file(out / "labels.tsv", label_seqs)
    save_label_file(out / "targets.tsv", targets)
    save_mask_file(out / "masks.tsv", masks)
    save_manifest(out / "manifest_out.tsv", records_out)
    (out / "mi_report.json").write_text(dump_json(mi_report), encoding="utf-8")
    # out_dir stays out of the effective config so runs into different
    # directories still produce byte-identical artifacts
    (out / "effective_config.json").write_text(dump_json(cfg.as_dict()), encoding="utf-8")

    figures = []
    if cfg.emit_figures:
        figdir = out / "figures"
        figdir.mkdir(exist_ok=True)
        plotting.save_inertia_png(figdir / "inertia.png", histories)
        counts_by_channel: dict = {}
        for seq in label_seqs:
            table = counts_by_channel.setdefault(seq.channel, {})
            for v in seq.labels:
                table[int(v)] = table.get(int(v), 0) + 1
        plotting.save_id_usage_png(figdir / "id_usage.png", counts_by_channel, vocab_size)
        grid = spectrogram_db(buffers[0], cfg.feature)
        plotting.save_spectrogram_png(
            figdir / "spectrogram.png", grid, WIDE_RATE, cfg.feature.hop_ms
        )
        figures = ["figures/inertia.png", "figures/id_usage.png", "figures/spectrogram.png"]

    report = {
        "mode": cfg.mode,
        "num_utterances": len(records),
        "vocab_size": vocab_size,
        "total_frames": int(sum(f.num_frames for f in features)),
        "mi_bits": mi_report["mi_bits"],
        "h_channel_bits": mi_report["h_channel_bits"],
        "id_overlap_count": mi_report["id_overlap_count"],
        "artifacts": [
            "codebook.json",
            "labels.tsv",
            "targets.tsv",
            "masks.tsv",
            "manifest_out.tsv",
            "mi_report.json",
            "effective_config.json",
            *figures,
        ],
    }
    if cfg.mode == "channel_aware":
        report["id_ranges"] = {
            "wide": [0, book.wide.k],
            "narrow": [book.offset, book.offset + book.narrow.k],
        }
    return report
