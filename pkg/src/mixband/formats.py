"""On-disk interchange: FMX1 feature matrices, codebook JSON, label/mask/manifest text."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .clustering import Codebook, FrameLabelSequence, PooledCodebook
from .errors import InvalidConfig, MalformedFile
from .labeling import MaskPlan, TargetSequence

FMX1_MAGIC = b"FMX1"

MANIFEST_HEADER = ["utt_id", "path", "channel", "num_frames"]


@dataclass
class UtteranceRecord:
    """One manifest row: where an utterance lives and which channel it belongs to."""

    utt_id: str
    path: str
    channel: str
    num_frames: Optional[int] = None


def encode_fmx1(matrix) -> bytes:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidConfig(f"FMX1 stores 2-D matrices, got shape {m.shape}")
    header = FMX1_MAGIC + struct.pack("<II", m.shape[0], m.shape[1])
    return header + m.astype("<f4").tobytes(order="C")


def decode_fmx1(data: bytes) -> np.ndarray:
    if len(data) < 12:
        raise MalformedFile(f"FMX1 header needs 12 bytes, got {len(data)}")
    if data[:4] != FMX1_MAGIC:
        raise MalformedFile(f"bad magic {data[:4]!r}, expected {FMX1_MAGIC!r}")
    rows, cols = struct.unpack("<II", data[4:12])
    expect = 12 + 4 * rows * cols
    if len(data) != expect:
        raise MalformedFile(f"FMX1 payload for {rows}x{cols} needs {expect} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=12)
    return values.reshape(rows, cols).astype(np.float64)


def save_fmx1(path, matrix) -> None:
    Path(path).write_bytes(encode_fmx1(matrix))


def load_fmx1(path) -> np.ndarray:
    return decode_fmx1(Path(path).read_bytes())


def save_features_csv(path, matrix) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidConfig(f"feature CSV stores 2-D matrices, got shape {m.shape}")
    with open(path, "w", encoding="utf-8") as fh:
        for row in m:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


def load_features_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise MalformedFile(f"feature CSV {path}: {exc}") from exc


def _round9(x: float) -> float:
    # re-parse so json emits at most 9 significant digits
    return float(f"{float(x):.9g}")


def _round9_nested(arr) -> list:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 1:
        return [_round9(v) for v in a]
    return [_round9_nested(row) for row in a]


def _codebook_dict(cb: Codebook) -> dict:
    return {
        "kind": "codebook",
        "feature_dim": cb.feature_dim,
        "k": cb.k,
        "channel": cb.channel,
        "seed": cb.seed,
        "inertia_history": [_round9(v) for v in cb.inertia_history],
        "empty_cluster_reseeds": cb.empty_cluster_reseeds,
        "standardize_mean": None
        if cb.standardize_mean is None
        else _round9_nested(cb.standardize_mean),
        "standardize_scale": None
        if cb.standardize_scale is None
        else _round9_nested(cb.standardize_scale),
        "centroids": _round9_nested(cb.centroids),
    }


def codebook_to_json(cb) -> str:
    if isinstance(cb, PooledCodebook):
        payload = {
            "kind": "pooled_codebook",
            "feature_dim": cb.feature_dim,
            "channel": "pooled",
            "offset": cb.offset,
            "vocab_size": cb.vocab_size,
            "wide": _codebook_dict(cb.wide),
            "narrow": _codebook_dict(cb.narrow),
        }
    elif isinstance(cb, Codebook):
        payload = _codebook_dict(cb)
    else:
        raise InvalidConfig(f"not a codebook: {type(cb).__name__}")
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _codebook_from_dict(d: dict) -> Codebook:
    try:
        cb = Codebook(
            centroids=np.asarray(d["centroids"], dtype=np.float64),
            channel=d["channel"],
            seed=int(d["seed"]),
            inertia_history=[float(v) for v in d.get("inertia_history", [])],
            empty_cluster_reseeds=int(d.get("empty_cluster_reseeds", 0)),
            standardize_mean=None
            if d.get("standardize_mean") is None
            else np.asarray(d["standardize_mean"], dtype=np.float64),
            standardize_scale=None
            if d.get("standardize_scale") is None
            else np.asarray(d["standardize_scale"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"codebook object missing or malformed field: {exc}") from exc
    if "k" in d and int(d["k"]) != cb.k:
        raise MalformedFile(f"declared k {d['k']} but {cb.k} centroids present")
    if "feature_dim" in d and int(d["feature_dim"]) != cb.feature_dim:
        raise MalformedFile(f"declared dim {d['feature_dim']} but centroids are {cb.feature_dim}-D")
    return cb


def codebook_from_json(text: str):
    """Parse either a plain codebook or a pooled two-channel codebook."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"codebook file is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise MalformedFile("codebook file must hold a JSON object")
    if d.get("kind") == "pooled_codebook" or ("wide" in d and "narrow" in d):
        try:
            wide = _codebook_from_dict(d["wide"])
            narrow = _codebook_from_dict(d["narrow"])
            offset = int(d["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFile(f"pooled codebook missing field: {exc}") from exc
        return PooledCodebook(wide=wide, narrow=narrow, offset=offset)
    return _codebook_from_dict(d)


def save_codebook(path, cb) -> None:
    Path(path).write_text(codebook_to_json(cb), encoding="utf-8")


def load_codebook(path):
    return codebook_from_json(Path(path).read_text(encoding="utf-8"))


def save_codebook_binary(path, cb: Codebook) -> None:
    """Binary sidecar: the centroid matrix in FMX1 layout."""
    if not isinstance(cb, Codebook):
        raise InvalidConfig("binary form stores a single codebook's centroids")
    save_fmx1(path, cb.centroids)


def write_label_lines(entries) -> str:
    """entries: iterable of (utt_id, ids) or FrameLabelSequence/TargetSequence."""
    lines = []
    for entry in entries:
        if isinstance(entry, FrameLabelSequence):
            utt_id, ids = entry.utt_id, entry.labels
        elif isinstance(entry, TargetSequence):
            utt_id, ids = entry.utt_id, entry.tokens
        else:
            utt_id, ids = entry
        lines.append(utt_id + "\t" + " ".join(str(int(i)) for i in ids))
    return "\n".join(lines) + ("\n" if lines else "")


def save_label_file(path, entries) -> None:
    Path(path).write_text(write_label_lines(entries), encoding="utf-8")


def parse_label_lines(text: str) -> list:
    """Returns [(utt_id, int64 array)] in file order."""
    out = []
    for ln, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise MalformedFile(f"label line {ln}: expected utt_id<TAB>ids, got {len(parts)} fields")
        utt_id, rest = parts
        try:
            ids = np.array([int(t) for t in rest.split()], dtype=np.int64)
        except ValueError as exc:
            raise MalformedFile(f"label line {ln}: non-integer id: {exc}") from exc
        out.append((utt_id, ids))
    return out


def load_label_file(path) -> list:
    return parse_label_lines(Path(path).read_text(encoding="utf-8"))


def write_mask_lines(plans: Sequence[MaskPlan]) -> str:
    lines = []
    for plan in plans:
        bits = "".join("1" if b else "0" for b in plan.masked)
        lines.append(plan.utt_id + "\t" + bits)
    return "\n".join(lines) + ("\n" if lines else "")


def save_mask_file(path, plans: Sequence[MaskPlan]) -> None:
    Path(path).write_text(write_mask_lines(plans), encoding="utf-8")


def parse_mask_lines(text: str) -> list:
    """Returns [(utt_id, bool array)] in file order."""
    out = []
    for ln, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise MalformedFile(f"mask line {ln}: expected utt_id<TAB>bits, got {len(parts)} fields")
        utt_id, bits = parts
        if set(bits) - {"0", "1"}:
            raise MalformedFile(f"mask line {ln}: bitstring must be 0s and 1s")
        out.append((utt_id, np.frombuffer(bits.encode("ascii"), dtype=np.uint8) == ord("1")))
    return out


def load_mask_file(path) -> list:
    return parse_mask_lines(Path(path).read_text(encoding="utf-8"))


def write_manifest_lines(records: Sequence[UtteranceRecord]) -> str:
    lines = ["\t".join(MANIFEST_HEADER)]
    for rec in records:
        nf = "-" if rec.num_frames is None else str(int(rec.num_frames))
        lines.append("\t".join([rec.utt_id, rec.path, rec.channel, nf]))
    return "\n".join(lines) + "\n"


def save_manifest(path, records: Sequence[UtteranceRecord]) -> None:
    Path(path).write_text(write_manifest_lines(records), encoding="utf-8")


def parse_manifest_lines(text: str) -> list:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedFile("manifest is empty, expected a header line")
    if lines[0].split("\t") != MANIFEST_HEADER:
        raise MalformedFile(f"manifest header must be {' '.join(MANIFEST_HEADER)!r}")
    records = []
    seen = set()
    for ln, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 4:
            raise MalformedFile(f"manifest line {ln}: expected 4 tab-separated fields")
        utt_id, path, channel, nf = parts
        if utt_id in seen:
            raise MalformedFile(f"manifest line {ln}: duplicate utt_id {utt_id!r}")
        seen.add(utt_id)
        if channel not in ("wide", "narrow"):
            raise MalformedFile(f"manifest line {ln}: channel must be wide or narrow, got {channel!r}")
        if nf in ("-", ""):
            num_frames = None
        else:
            try:
                num_frames = int(nf)
            except ValueError as exc:
                raise MalformedFile(f"manifest line {ln}: bad num_frames {nf!r}") from exc
        records.append(UtteranceRecord(utt_id, path, channel, num_frames))
    return records


def load_manifest(path) -> list:
    return parse_manifest_lines(Path(path).read_text(encoding="utf-8"))


def dump_json(obj) -> str:
    """Stable JSON for artifact files and stdout report lines."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def dump_json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(", ", ": "))
