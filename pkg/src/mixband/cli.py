"""Command-line surface: synthesis, resampling, features, clustering, labels, losses.

Every subcommand prints a single JSON report line to stdout; artifacts go to
the paths named by flags. Exit codes: 0 success, 1 invariant or assertion
failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import load_wav, resample, save_wav, synthesize
from .clustering import (
    Codebook,
    PooledCodebook,
    assign,
    assign_channel_aware,
    kmeans_fit,
    pool_codebooks,
)
from .dsp import (
    MelFilterbankConfig,
    band_energy_ratio,
    export_spectrogram,
    logmel,
    spectrogram_db,
)
from .errors import InvalidConfig, MixbandError
from .formats import (
    dump_json_line,
    load_codebook,
    load_features_csv,
    load_fmx1,
    load_label_file,
    load_manifest,
    load_mask_file,
    save_codebook,
    save_codebook_binary,
    save_features_csv,
    save_fmx1,
    save_label_file,
    save_mask_file,
)
from .labeling import (
    DEFAULT_SPAN_LENGTH,
    DEFAULT_START_PROB,
    TargetSequence,
    Vocabulary,
    collapse_ids,
    span_mask,
    wrap_with_boundaries,
)
from .losses import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    LossBreakdown,
    ctc_loss,
    finetune_loss,
    log_softmax,
    masked_prediction_loss,
    pretrain_loss,
    sequence_loss,
)
from .pipeline import (
    PipelineConfig,
    config_from_dict,
    mutual_information_report,
    run_label_pipeline,
)

log = logging.getLogger("mixband")


def _report(obj) -> None:
    print(dump_json_line(obj))


def _load_matrix(path) -> np.ndarray:
    if str(path).endswith(".csv"):
        return load_features_csv(path)
    return load_fmx1(path)


def _save_matrix(path, matrix, fmt: str) -> None:
    if fmt == "auto":
        fmt = "csv" if str(path).endswith(".csv") else "fmx1"
    if fmt == "csv":
        save_features_csv(path, matrix)
    elif fmt == "fmx1":
        save_fmx1(path, matrix)
    else:
        raise InvalidConfig(f"unknown matrix format {fmt!r}")


def _offset_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"offset must be an integer or 'auto', got {text!r}")


def _mel_config(args) -> MelFilterbankConfig:
    return MelFilterbankConfig(
        n_mels=args.n_mels,
        fft_size=args.fft_size,
        f_min_hz=args.f_min,
        f_max_hz=args.f_max,
        window_ms=args.window_ms,
        hop_ms=args.hop_ms,
    )


def _add_mel_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-mels", type=int, default=40)
    p.add_argument("--fft-size", type=int, default=512)
    p.add_argument("--f-min", type=float, default=20.0)
    p.add_argument("--f-max", type=float, default=7600.0)
    p.add_argument("--window-ms", type=float, default=25.0)
    p.add_argument("--hop-ms", type=float, default=10.0)


def _select_entry(entries, utt_id, what: str):
    if not entries:
        raise InvalidConfig(f"{what} file holds no utterances")
    if utt_id is None:
        return entries[0]
    for entry in entries:
        if entry[0] == utt_id:
            return entry
    raise InvalidConfig(f"utt_id {utt_id!r} not present in {what} file")


def cmd_synth(args) -> None:
    buf = synthesize(
        args.kind, freq_hz=args.freq, duration_s=args.duration,
        rate_hz=args.rate, seed=args.seed,
    )
    save_wav(args.out, buf)
    _report({
        "command": "synth", "out": str(args.out), "kind": args.kind,
        "rate_hz": buf.sample_rate_hz, "num_samples": len(buf.samples),
    })


def cmd_resample(args) -> None:
    src = load_wav(args.input)
    dst = resample(src, args.rate)
    save_wav(args.out, dst)
    _report({
        "command": "resample", "out": str(args.out),
        "source_rate_hz": src.sample_rate_hz, "target_rate_hz": dst.sample_rate_hz,
        "num_samples_in": len(src.samples), "num_samples_out": len(dst.samples),
    })


def cmd_features(args) -> None:
    buf = load_wav(args.input)
    if args.resample_to is not None:
        buf = resample(buf, args.resample_to)
    cfg = _mel_config(args)
    feats = logmel(buf, cfg)
    _save_matrix(args.out, feats.rows, args.format)
    _report({
        "command": "features", "out": str(args.out),
        "num_frames": feats.num_frames, "dim": feats.dim,
        "rate_hz": buf.sample_rate_hz,
    })


def cmd_spectrum(args) -> None:
    buf = load_wav(args.input)
    cfg = _mel_config(args)
    rep = band_energy_ratio(buf, args.cutoff, cfg)
    if args.export is not None:
        fmt = "pgm" if str(args.export).endswith(".pgm") else "csv"
        Path(args.export).write_bytes(export_spectrogram(buf, cfg, fmt))
    if args.figure is not None:
        from . import plotting

        grid = spectrogram_db(buf, cfg)
        plotting.save_spectrogram_png(args.figure, grid, buf.sample_rate_hz, cfg.hop_ms)
    _report({
        "command": "spectrum", "input": str(args.input),
        "rate_hz": buf.sample_rate_hz, "cutoff_hz": rep.cutoff_hz,
        "low_band_energy": rep.low_band_energy,
        "high_band_energy": rep.high_band_energy,
        "high_fraction": rep.high_fraction,
    })


def cmd_kmeans(args) -> None:
    rows = np.vstack([_load_matrix(p) for p in args.features])
    book = kmeans_fit(
        rows, args.k, max_iters=args.max_iters, seed=args.seed,
        channel=args.channel, standardize=args.standardize,
    )
    save_codebook(args.out, book)
    if args.binary_centroids is not None:
        save_codebook_binary(args.binary_centroids, book)
    if args.figure is not None:
        from . import plotting

        plotting.save_inertia_png(args.figure, {args.channel: book.inertia_history})
    _report({
        "command": "kmeans", "out": str(args.out), "k": book.k,
        "feature_dim": book.feature_dim, "num_points": rows.shape[0],
        "iterations": len(book.inertia_history),
        "final_inertia": book.inertia_history[-1] if book.inertia_history else None,
        "empty_cluster_reseeds": book.empty_cluster_reseeds,
    })


def cmd_pool_codebooks(args) -> None:
    wide = load_codebook(args.wide)
    narrow = load_codebook(args.narrow)
    for book, want in ((wide, "wide"), (narrow, "narrow")):
        if not isinstance(book, Codebook):
            raise InvalidConfig(f"{want} input must be a single-channel codebook")
        if book.channel != want:
            raise InvalidConfig(
                f"{want} position got a codebook tagged {book.channel!r}; "
                f"fit it with --channel {want}"
            )
    pooled = pool_codebooks(wide, narrow, args.offset)
    save_codebook(args.out, pooled)
    _report({
        "command": "pool-codebooks", "out": str(args.out),
        "wide_k": pooled.wide.k, "narrow_k": pooled.narrow.k,
        "offset": pooled.offset, "vocab_size": pooled.vocab_size,
        "id_ranges": {
            "wide": [0, pooled.wide.k],
            "narrow": [pooled.offset, pooled.offset + pooled.narrow.k],
        },
    })


def cmd_label(args) -> None:
    book = load_codebook(args.codebook)
    if len(args.features) > 1 and args.utt_id is not None:
        raise InvalidConfig("--utt-id applies to a single feature file")
    seqs = []
    for path in args.features:
        mat = _load_matrix(path)
        utt_id = args.utt_id if args.utt_id is not None else Path(path).stem
        if isinstance(book, PooledCodebook):
            if args.channel is None:
                raise InvalidConfig("pooled codebooks need --channel wide|narrow")
            seq = assign_channel_aware(book, mat, args.channel)
        else:
            seq = assign(book, mat, channel=args.channel)
        seq.utt_id = utt_id
        seqs.append(seq)
    save_label_file(args.out, seqs)
    vocab = book.vocab_size if isinstance(book, PooledCodebook) else book.k
    _report({
        "command": "label", "out": str(args.out),
        "num_utterances": len(seqs), "vocab_size": vocab,
        "total_frames": int(sum(len(s.labels) for s in seqs)),
    })


def cmd_collapse(args) -> None:
    entries = load_label_file(args.input)
    if args.wrap and args.vocab_size is None:
        raise InvalidConfig("--wrap needs --vocab-size to place the boundary tokens")
    vocab = Vocabulary(args.vocab_size) if args.wrap else None
    targets = []
    total_in = 0
    for utt_id, ids in entries:
        total_in += len(ids)
        target = TargetSequence(utt_id, collapse_ids(ids.tolist()))
        if vocab is not None:
            target = wrap_with_boundaries(target, vocab)
        targets.append(target)
    save_label_file(args.out, targets)
    _report({
        "command": "collapse", "out": str(args.out),
        "num_utterances": len(targets), "total_ids_in": total_in,
        "total_tokens_out": sum(len(t.tokens) for t in targets),
    })


def cmd_mask(args) -> None:
    entries = load_label_file(args.input)
    plans = [
        span_mask(
            len(ids), span_length=args.span_length, start_prob=args.start_prob,
            seed=args.seed + i, utt_id=utt_id,
        )
        for i, (utt_id, ids) in enumerate(entries)
    ]
    save_mask_file(args.out, plans)
    fractions = [p.masked_fraction for p in plans]
    _report({
        "command": "mask", "out": str(args.out), "num_utterances": len(plans),
        "span_length": args.span_length, "start_prob": args.start_prob,
        "mean_masked_fraction": float(np.mean(fractions)) if fractions else 0.0,
    })


_LOSS_NEEDS = {
    "pretrain": ("logits", "labels", "mask", "decoder_logits", "targets"),
    "finetune": ("log_probs", "targets", "attention_logits"),
}


def cmd_loss(args) -> None:
    missing = [n for n in _LOSS_NEEDS[args.mode] if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise InvalidConfig(f"{args.mode} mode needs {flags}")
    breakdown = LossBreakdown()
    if args.mode == "pretrain":
        logits = _load_matrix(args.logits)
        _, labels = _select_entry(load_label_file(args.labels), args.utt_id, "label")
        _, mask = _select_entry(load_mask_file(args.mask), args.utt_id, "mask")
        _, tokens = _select_entry(load_label_file(args.targets), args.utt_id, "target")
        dec = _load_matrix(args.decoder_logits)
        breakdown.l_m = masked_prediction_loss(logits, labels, mask)
        breakdown.l_s = sequence_loss(dec, tokens.tolist())
        breakdown.alpha = args.alpha
        breakdown.total_pretrain = pretrain_loss(breakdown.l_m, breakdown.l_s, args.alpha)
    else:
        # stored float32 rows drift off normalization; renormalize in float64
        lp = log_softmax(_load_matrix(args.log_probs))
        _, tokens = _select_entry(load_label_file(args.targets), args.utt_id, "target")
        att = _load_matrix(args.attention_logits)
        breakdown.ctc, _ = ctc_loss(lp, tokens.tolist(), blank_id=args.blank_id)
        breakdown.attention = sequence_loss(att, tokens.tolist())
        breakdown.beta = args.beta
        breakdown.total_finetune = finetune_loss(breakdown.ctc, breakdown.attention, args.beta)
    _report({"command": "loss", "mode": args.mode, **breakdown.as_dict()})


def cmd_diag_mi(args) -> None:
    from .clustering import FrameLabelSequence

    entries = load_label_file(args.input)
    channel_by_utt = {rec.utt_id: rec.channel for rec in load_manifest(args.manifest)}
    seqs = []
    for utt_id, ids in entries:
        if utt_id not in channel_by_utt:
            raise InvalidConfig(f"utt_id {utt_id!r} missing from manifest")
        seqs.append(FrameLabelSequence(utt_id, ids, channel_by_utt[utt_id]))
    if args.vocab_size is not None:
        vocab = args.vocab_size
    else:
        vocab = int(max((int(s.labels.max()) for s in seqs if len(s.labels)), default=-1)) + 1
    rep = mutual_information_report(seqs, vocab)
    if args.figure is not None:
        from . import plotting

        counts: dict = {}
        for seq in seqs:
            table = counts.setdefault(seq.channel, {})
            for v in seq.labels:
                table[int(v)] = table.get(int(v), 0) + 1
        plotting.save_id_usage_png(args.figure, counts, vocab)
    _report({"command": "diag-mi", **rep})


_PIPELINE_OVERRIDES = (
    "mode", "k_wide", "k_narrow", "k_pooled", "offset", "max_iters",
    "span_length", "start_prob", "alpha", "beta", "seed",
    "standardize", "wrap_targets", "emit_figures",
)


def cmd_pipeline(args) -> None:
    base = {}
    if args.config is not None:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config file {args.config}: {exc}") from exc
    for name in _PIPELINE_OVERRIDES:
        value = getattr(args, name)
        if value is not None:
            base[name] = value
    cfg = config_from_dict(base)
    manifest = load_manifest(args.manifest)
    report = run_label_pipeline(
        cfg, manifest, args.out_dir, base_dir=Path(args.manifest).parent
    )
    _report({"command": "pipeline", "out_dir": str(args.out_dir), **report})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixband",
        description="Channel-aware pseudo-labeling tools for mixed-bandwidth speech.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a test signal WAV")
    p.add_argument("out")
    p.add_argument("--kind", choices=("sine", "chirp", "white_noise"), default="sine")
    p.add_argument("--freq", type=float, default=1000.0)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--rate", type=int, default=16000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("resample", help="convert between 8 and 16 kHz")
    p.add_argument("input")
    p.add_argument("out")
    p.add_argument("--rate", type=int, required=True)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("features", help="log-mel features to FMX1 or CSV")
    p.add_argument("input")
    p.add_argument("out")
    p.add_argument("--format", choices=("auto", "fmx1", "csv"), default="auto")
    p.add_argument("--resample-to", type=int, default=None)
    _add_mel_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("spectrum", help="band energy split and optional spectrogram")
    p.add_argument("input")
    p.add_argument("--cutoff", type=float, default=4000.0)
    p.add_argument("--export", default=None, help="write grid to .pgm or .csv")
    p.add_argument("--figure", default=None, help="write a PNG heatmap")
    _add_mel_flags(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("kmeans", help="fit a codebook over feature files")
    p.add_argument("features", nargs="+")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--channel", choices=("wide", "narrow", "pooled"), default="pooled")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--binary-centroids", default=None, help="also write centroids as FMX1")
    p.add_argument("--figure", default=None, help="write the inertia curve PNG")
    p.set_defaults(func=cmd_kmeans)

    p = sub.add_parser("pool-codebooks", help="merge wide and narrow codebooks")
    p.add_argument("wide")
    p.add_argument("narrow")
    p.add_argument("--out", required=True)
    p.add_argument("--offset", type=_offset_arg, default="auto")
    p.set_defaults(func=cmd_pool_codebooks)

    p = sub.add_parser("label", help="assign cluster IDs to feature files")
    p.add_argument("features", nargs="+")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channel", choices=("wide", "narrow"), default=None)
    p.add_argument("--utt-id", default=None, help="override the file-stem utterance id")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("collapse", help="run-length collapse label sequences")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--wrap", action="store_true", help="add start/end boundary tokens")
    p.add_argument("--vocab-size", type=int, default=None)
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("mask", help="draw span masks for each utterance")
    p.add_argument("input", help="label file supplying per-utterance frame counts")
    p.add_argument("--out", required=True)
    p.add_argument("--span-length", type=int, default=DEFAULT_SPAN_LENGTH)
    p.add_argument("--start-prob", type=float, default=DEFAULT_START_PROB)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("loss", help="evaluate composite losses from matrix files")
    p.add_argument("--mode", choices=("pretrain", "finetune"), required=True)
    p.add_argument("--utt-id", default=None)
    p.add_argument("--logits", help="pretrain: encoder logit matrix")
    p.add_argument("--labels", help="pretrain: frame label file")
    p.add_argument("--mask", help="pretrain: mask file")
    p.add_argument("--decoder-logits", help="pretrain: decoder logit matrix")
    p.add_argument("--targets", help="collapsed target file")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--log-probs", help="finetune: per-frame log-prob matrix (renormalized)")
    p.add_argument("--attention-logits", help="finetune: decoder logit matrix")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument("--blank-id", type=int, default=0)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("diag-mi", help="mutual information between IDs and channels")
    p.add_argument("input", help="label file")
    p.add_argument("--manifest", required=True, help="supplies each utterance's channel")
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--figure", default=None, help="write the ID usage PNG")
    p.set_defaults(func=cmd_diag_mi)

    p = sub.add_parser("pipeline", help="manifest in, labeled artifact set out")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="JSON config; flags below override it")
    p.add_argument("--mode", choices=("pooled_baseline", "channel_aware"), default=None)
    p.add_argument("--k-wide", type=int, default=None)
    p.add_argument("--k-narrow", type=int, default=None)
    p.add_argument("--k-pooled", type=int, default=None)
    p.add_argument("--offset", type=_offset_arg, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--span-length", type=int, default=None)
    p.add_argument("--start-prob", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--wrap-targets", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument(
        "--figures", dest="emit_figures", action=argparse.BooleanOptionalAction, default=None
    )
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except MixbandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
