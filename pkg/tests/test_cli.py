"""CLI tests: subcommand behavior, report lines, exit codes, file artifacts."""

import json
import math

import numpy as np
import pytest

from mixband.audio import load_wav
from mixband.cli import main
from mixband.formats import (
    load_codebook,
    load_fmx1,
    load_label_file,
    load_manifest,
    load_mask_file,
    save_fmx1,
    save_label_file,
    save_manifest,
    save_mask_file,
    UtteranceRecord,
)
from mixband.labeling import MaskPlan


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    report = None
    if captured.out.strip():
        report = json.loads(captured.out.strip().splitlines()[-1])
    return code, report, captured.err


def synth(capsys, path, **kw):
    args = ["synth", path]
    for key, val in kw.items():
        args += [f"--{key.replace('_', '-')}", str(val)]
    code, report, _ = run_cli(capsys, *args)
    assert code == 0
    return report


class TestSynthResample:
    def test_synth_writes_wav(self, tmp_path, capsys):
        report = synth(capsys, tmp_path / "t.wav", kind="sine", freq=440, duration=0.25)
        assert report["rate_hz"] == 16000
        assert report["num_samples"] == 4000
        buf = load_wav(tmp_path / "t.wav")
        assert buf.sample_rate_hz == 16000 and len(buf.samples) == 4000

    def test_resample_doubles_length(self, tmp_path, capsys):
        synth(capsys, tmp_path / "n.wav", rate=8000, duration=0.25)
        code, report, _ = run_cli(
            capsys, "resample", tmp_path / "n.wav", tmp_path / "w.wav", "--rate", 16000
        )
        assert code == 0
        assert report["source_rate_hz"] == 8000
        assert report["target_rate_hz"] == 16000
        assert report["num_samples_out"] == 2 * report["num_samples_in"]
        assert load_wav(tmp_path / "w.wav").sample_rate_hz == 16000

    def test_missing_input_names_path(self, tmp_path, capsys):
        code, _, err = run_cli(
            capsys, "resample", tmp_path / "absent.wav", tmp_path / "o.wav", "--rate", 16000
        )
        assert code == 2
        assert "absent.wav" in err


class TestFeatures:
    def test_fmx1_output_shape(self, tmp_path, capsys):
        synth(capsys, tmp_path / "t.wav", duration=0.3)
        code, report, _ = run_cli(capsys, "features", tmp_path / "t.wav", tmp_path / "f.fmx")
        assert code == 0
        mat = load_fmx1(tmp_path / "f.fmx")
        assert mat.shape == (report["num_frames"], 40)

    def test_csv_by_extension_and_mel_flags(self, tmp_path, capsys):
        synth(capsys, tmp_path / "t.wav", duration=0.2)
        code, report, _ = run_cli(
            capsys, "features", tmp_path / "t.wav", tmp_path / "f.csv", "--n-mels", 20
        )
        assert code == 0 and report["dim"] == 20
        text = (tmp_path / "f.csv").read_text()
        assert len(text.splitlines()[0].split(",")) == 20

    def test_narrow_input_needs_resample_flag(self, tmp_path, capsys):
        synth(capsys, tmp_path / "n.wav", rate=8000, duration=0.2)
        code, _, err = run_cli(capsys, "features", tmp_path / "n.wav", tmp_path / "f.fmx")
        assert code == 2
        code, report, _ = run_cli(
            capsys, "features", tmp_path / "n.wav", tmp_path / "f.fmx",
            "--resample-to", 16000,
        )
        assert code == 0 and report["rate_hz"] == 16000


class TestSpectrum:
    def test_tone_has_no_high_band(self, tmp_path, capsys):
        synth(capsys, tmp_path / "t.wav", freq=1000, duration=0.3)
        code, report, _ = run_cli(capsys, "spectrum", tmp_path / "t.wav")
        assert code == 0
        assert report["cutoff_hz"] == 4000.0
        assert report["high_fraction"] < 1e-4

    def test_export_and_figure(self, tmp_path, capsys):
        synth(capsys, tmp_path / "t.wav", duration=0.2)
        code, _, _ = run_cli(
            capsys, "spectrum", tmp_path / "t.wav",
            "--export", tmp_path / "grid.pgm", "--figure", tmp_path / "spec.png",
        )
        assert code == 0
        assert (tmp_path / "grid.pgm").read_bytes()[:2] == b"P5"
        assert (tmp_path / "spec.png").read_bytes()[:4] == b"\x89PNG"


class TestKmeansPoolLabel:
    def fit(self, capsys, tmp_path, name, channel, seed=0, k=3):
        synth(capsys, tmp_path / f"{name}.wav", duration=0.3, seed=seed, kind="white_noise")
        run_cli(capsys, "features", tmp_path / f"{name}.wav", tmp_path / f"{name}.fmx")
        code, report, _ = run_cli(
            capsys, "kmeans", tmp_path / f"{name}.fmx", "--k", k,
            "--out", tmp_path / f"{name}.json", "--channel", channel, "--seed", seed,
        )
        assert code == 0
        return report

    def test_kmeans_report_and_artifacts(self, tmp_path, capsys):
        synth(capsys, tmp_path / "t.wav", duration=0.3, kind="white_noise")
        run_cli(capsys, "features", tmp_path / "t.wav", tmp_path / "t.fmx")
        code, report, _ = run_cli(
            capsys, "kmeans", tmp_path / "t.fmx", "--k", 4, "--out", tmp_path / "cb.json",
            "--binary-centroids", tmp_path / "cb.fmx", "--figure", tmp_path / "inertia.png",
        )
        assert code == 0
        assert report["k"] == 4 and report["iterations"] >= 1
        assert math.isfinite(report["final_inertia"])
        book = load_codebook(tmp_path / "cb.json")
        assert np.allclose(
            load_fmx1(tmp_path / "cb.fmx"), book.centroids, rtol=1e-6, atol=1e-6
        )
        assert (tmp_path / "inertia.png").read_bytes()[:4] == b"\x89PNG"

    def test_pool_and_channel_aware_label(self, tmp_path, capsys):
        self.fit(capsys, tmp_path, "wide", "wide", seed=0)
        self.fit(capsys, tmp_path, "narrow", "narrow", seed=1)
        code, report, _ = run_cli(
            capsys, "pool-codebooks", tmp_path / "wide.json", tmp_path / "narrow.json",
            "--out", tmp_path / "pooled.json",
        )
        assert code == 0
        assert report["offset"] == 3 and report["vocab_size"] == 6
        assert report["id_ranges"] == {"wide": [0, 3], "narrow": [3, 6]}

        code, report, _ = run_cli(
            capsys, "label", tmp_path / "narrow.fmx",
            "--codebook", tmp_path / "pooled.json", "--out", tmp_path / "l.tsv",
            "--channel", "narrow",
        )
        assert code == 0 and report["vocab_size"] == 6
        (utt_id, ids), = load_label_file(tmp_path / "l.tsv")
        assert utt_id == "narrow"
        assert ids.min() >= 3 and ids.max() < 6

    def test_pooled_codebook_requires_channel(self, tmp_path, capsys):
        self.fit(capsys, tmp_path, "wide", "wide")
        self.fit(capsys, tmp_path, "narrow", "narrow", seed=1)
        run_cli(
            capsys, "pool-codebooks", tmp_path / "wide.json", tmp_path / "narrow.json",
            "--out", tmp_path / "pooled.json",
        )
        code, _, err = run_cli(
            capsys, "label", tmp_path / "wide.fmx",
            "--codebook", tmp_path / "pooled.json", "--out", tmp_path / "l.tsv",
        )
        assert code == 2 and "--channel" in err

    def test_pool_rejects_untagged_codebook(self, tmp_path, capsys):
        self.fit(capsys, tmp_path, "wide", "wide")
        self.fit(capsys, tmp_path, "plain", "pooled", seed=1)
        code, _, err = run_cli(
            capsys, "pool-codebooks", tmp_path / "wide.json", tmp_path / "plain.json",
            "--out", tmp_path / "pooled.json",
        )
        assert code == 2 and "--channel narrow" in err

    def test_pool_offset_too_small(self, tmp_path, capsys):
        self.fit(capsys, tmp_path, "wide", "wide")
        self.fit(capsys, tmp_path, "narrow", "narrow", seed=1)
        code, _, err = run_cli(
            capsys, "pool-codebooks", tmp_path / "wide.json", tmp_path / "narrow.json",
            "--out", tmp_path / "pooled.json", "--offset", 2,
        )
        assert code == 2 and "offset" in err

    def test_bad_offset_text_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["pool-codebooks", "a", "b", "--out", "c", "--offset", "half"])
        assert exc.value.code == 2


class TestCollapseMask:
    def test_collapse_merges_runs(self, tmp_path, capsys):
        save_label_file(tmp_path / "l.tsv", [("u", [7, 7, 3, 3, 3, 7])])
        code, report, _ = run_cli(
            capsys, "collapse", tmp_path / "l.tsv", "--out", tmp_path / "t.tsv"
        )
        assert code == 0
        assert report["total_ids_in"] == 6 and report["total_tokens_out"] == 3
        (_, tokens), = load_label_file(tmp_path / "t.tsv")
        assert tokens.tolist() == [7, 3, 7]

    def test_wrap_needs_vocab_size(self, tmp_path, capsys):
        save_label_file(tmp_path / "l.tsv", [("u", [1, 2])])
        code, _, err = run_cli(
            capsys, "collapse", tmp_path / "l.tsv", "--out", tmp_path / "t.tsv", "--wrap"
        )
        assert code == 2 and "--vocab-size" in err

    def test_wrap_adds_boundaries(self, tmp_path, capsys):
        save_label_file(tmp_path / "l.tsv", [("u", [1, 1, 2])])
        code, _, _ = run_cli(
            capsys, "collapse", tmp_path / "l.tsv", "--out", tmp_path / "t.tsv",
            "--wrap", "--vocab-size", 10,
        )
        assert code == 0
        (_, tokens), = load_label_file(tmp_path / "t.tsv")
        assert tokens.tolist() == [11, 1, 2, 12]

    def test_mask_lengths_match_and_deterministic(self, tmp_path, capsys):
        save_label_file(tmp_path / "l.tsv", [("a", list(range(50))), ("b", list(range(30)))])
        code, report, _ = run_cli(
            capsys, "mask", tmp_path / "l.tsv", "--out", tmp_path / "m.tsv", "--seed", 3
        )
        assert code == 0 and report["num_utterances"] == 2
        masks = load_mask_file(tmp_path / "m.tsv")
        assert [m[0] for m in masks] == ["a", "b"]
        assert [len(m[1]) for m in masks] == [50, 30]
        first = (tmp_path / "m.tsv").read_bytes()
        run_cli(capsys, "mask", tmp_path / "l.tsv", "--out", tmp_path / "m.tsv", "--seed", 3)
        assert (tmp_path / "m.tsv").read_bytes() == first


class TestLoss:
    def test_pretrain_uniform_components(self, tmp_path, capsys):
        save_fmx1(tmp_path / "logits.fmx", np.zeros((6, 4)))
        save_label_file(tmp_path / "labels.tsv", [("u", [0, 1, 2, 3, 0, 1])])
        save_mask_file(
            tmp_path / "mask.tsv",
            [MaskPlan("u", np.array([1, 1, 1, 0, 0, 0], dtype=bool), 10, 0.065, 0)],
        )
        save_label_file(tmp_path / "targets.tsv", [("u", [1, 2])])
        save_fmx1(tmp_path / "dec.fmx", np.zeros((2, 10)))
        code, report, _ = run_cli(
            capsys, "loss", "--mode", "pretrain",
            "--logits", tmp_path / "logits.fmx", "--labels", tmp_path / "labels.tsv",
            "--mask", tmp_path / "mask.tsv", "--decoder-logits", tmp_path / "dec.fmx",
            "--targets", tmp_path / "targets.tsv",
        )
        assert code == 0
        assert report["l_m"] == pytest.approx(math.log(4), abs=1e-9)
        assert report["l_s"] == pytest.approx(math.log(10), abs=1e-9)
        assert report["alpha"] == 0.5
        assert report["total_pretrain"] == pytest.approx(
            0.5 * (math.log(4) + math.log(10)), abs=1e-9
        )

    def test_finetune_uniform_components(self, tmp_path, capsys):
        save_fmx1(tmp_path / "lp.fmx", np.log(np.full((2, 2), 0.5)))
        save_label_file(tmp_path / "targets.tsv", [("u", [1])])
        save_fmx1(tmp_path / "att.fmx", np.zeros((1, 2)))
        code, report, _ = run_cli(
            capsys, "loss", "--mode", "finetune",
            "--log-probs", tmp_path / "lp.fmx", "--targets", tmp_path / "targets.tsv",
            "--attention-logits", tmp_path / "att.fmx",
        )
        assert code == 0
        assert report["ctc"] == pytest.approx(-math.log(0.75), abs=1e-6)
        assert report["attention"] == pytest.approx(math.log(2), abs=1e-9)
        assert report["beta"] == 0.3
        want = 0.3 * report["ctc"] + 0.7 * report["attention"]
        assert report["total_finetune"] == pytest.approx(want, abs=1e-12)

    def test_missing_mode_flags_listed(self, capsys):
        code, _, err = run_cli(capsys, "loss", "--mode", "pretrain")
        assert code == 2
        for flag in ("--logits", "--labels", "--mask", "--decoder-logits", "--targets"):
            assert flag in err

    def test_missing_file_exit_2(self, tmp_path, capsys):
        save_label_file(tmp_path / "targets.tsv", [("u", [1])])
        code, _, err = run_cli(
            capsys, "loss", "--mode", "finetune",
            "--log-probs", tmp_path / "gone.fmx", "--targets", tmp_path / "targets.tsv",
            "--attention-logits", tmp_path / "gone2.fmx",
        )
        assert code == 2 and "gone.fmx" in err

    def test_utt_id_selects_entry(self, tmp_path, capsys):
        save_fmx1(tmp_path / "lp.fmx", np.log(np.full((2, 2), 0.5)))
        save_label_file(tmp_path / "targets.tsv", [("a", [1, 1, 1]), ("b", [1])])
        save_fmx1(tmp_path / "att.fmx", np.zeros((1, 2)))
        code, report, _ = run_cli(
            capsys, "loss", "--mode", "finetune", "--utt-id", "b",
            "--log-probs", tmp_path / "lp.fmx", "--targets", tmp_path / "targets.tsv",
            "--attention-logits", tmp_path / "att.fmx",
        )
        assert code == 0
        assert report["ctc"] == pytest.approx(-math.log(0.75), abs=1e-6)

    def test_unknown_utt_id(self, tmp_path, capsys):
        save_fmx1(tmp_path / "lp.fmx", np.log(np.full((2, 2), 0.5)))
        save_label_file(tmp_path / "targets.tsv", [("a", [1])])
        save_fmx1(tmp_path / "att.fmx", np.zeros((1, 2)))
        code, _, err = run_cli(
            capsys, "loss", "--mode", "finetune", "--utt-id", "zz",
            "--log-probs", tmp_path / "lp.fmx", "--targets", tmp_path / "targets.tsv",
            "--attention-logits", tmp_path / "att.fmx",
        )
        assert code == 2 and "zz" in err


class TestDiagMi:
    def test_disjoint_ranges_full_bit(self, tmp_path, capsys):
        save_label_file(tmp_path / "l.tsv", [("a", [0, 1, 0, 2]), ("b", [5, 6, 5, 7])])
        save_manifest(
            tmp_path / "m.tsv",
            [
                UtteranceRecord("a", "a.wav", "wide", 4),
                UtteranceRecord("b", "b.wav", "narrow", 4),
            ],
        )
        code, report, _ = run_cli(
            capsys, "diag-mi", tmp_path / "l.tsv", "--manifest", tmp_path / "m.tsv",
            "--figure", tmp_path / "usage.png",
        )
        assert code == 0
        assert report["mi_bits"] == pytest.approx(1.0, abs=1e-9)
        assert report["h_channel_bits"] == pytest.approx(1.0, abs=1e-9)
        assert report["id_overlap_count"] == 0
        assert report["vocab_size"] == 8
        assert (tmp_path / "usage.png").read_bytes()[:4] == b"\x89PNG"

    def test_label_missing_from_manifest(self, tmp_path, capsys):
        save_label_file(tmp_path / "l.tsv", [("a", [0]), ("zz", [1])])
        save_manifest(tmp_path / "m.tsv", [UtteranceRecord("a", "a.wav", "wide", 1)])
        code, _, err = run_cli(
            capsys, "diag-mi", tmp_path / "l.tsv", "--manifest", tmp_path / "m.tsv"
        )
        assert code == 2 and "zz" in err


def build_corpus(tmp_path, capsys, n_wide=2, n_narrow=2, duration=0.3):
    records = []
    for i in range(n_wide):
        name = f"w{i}.wav"
        synth(capsys, tmp_path / name, rate=16000, duration=duration,
              kind="white_noise", seed=i)
        records.append(UtteranceRecord(f"w{i}", name, "wide"))
    for i in range(n_narrow):
        name = f"n{i}.wav"
        synth(capsys, tmp_path / name, rate=8000, duration=duration,
              kind="white_noise", seed=100 + i)
        records.append(UtteranceRecord(f"n{i}", name, "narrow"))
    save_manifest(tmp_path / "manifest.tsv", records)
    return tmp_path / "manifest.tsv"


class TestPipeline:
    def test_channel_aware_end_to_end(self, tmp_path, capsys):
        manifest = build_corpus(tmp_path, capsys)
        out = tmp_path / "out"
        code, report, _ = run_cli(
            capsys, "pipeline", "--manifest", manifest, "--out-dir", out,
            "--mode", "channel_aware", "--k-wide", 3, "--k-narrow", 3,
            "--max-iters", 10, "--seed", 7,
        )
        assert code == 0
        assert report["vocab_size"] == 6
        assert report["id_ranges"] == {"wide": [0, 3], "narrow": [3, 6]}
        for name in (
            "codebook.json", "labels.tsv", "targets.tsv", "masks.tsv",
            "manifest_out.tsv", "mi_report.json", "effective_config.json",
        ):
            assert (out / name).exists(), name
        for fig in ("inertia.png", "id_usage.png", "spectrogram.png"):
            assert (out / "figures" / fig).read_bytes()[:4] == b"\x89PNG"

        labels = dict(load_label_file(out / "labels.tsv"))
        assert set(labels) == {"w0", "w1", "n0", "n1"}
        for utt, ids in labels.items():
            if utt.startswith("w"):
                assert ids.max() < 3
            else:
                assert ids.min() >= 3 and ids.max() < 6

        mi = json.loads((out / "mi_report.json").read_text())
        assert mi["id_overlap_count"] == 0
        assert mi["mi_bits"] == pytest.approx(mi["h_channel_bits"], abs=1e-9)

        out_manifest = load_manifest(out / "manifest_out.tsv")
        assert [r.utt_id for r in out_manifest] == ["w0", "w1", "n0", "n1"]
        assert all(r.num_frames is not None for r in out_manifest)

    def test_pooled_baseline_mode(self, tmp_path, capsys):
        manifest = build_corpus(tmp_path, capsys)
        out = tmp_path / "out"
        code, report, _ = run_cli(
            capsys, "pipeline", "--manifest", manifest, "--out-dir", out,
            "--mode", "pooled_baseline", "--k-pooled", 6, "--max-iters", 10,
            "--no-figures",
        )
        assert code == 0
        assert report["vocab_size"] == 6
        assert "id_ranges" not in report
        assert not (out / "figures").exists()

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        manifest = build_corpus(tmp_path, capsys)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "mode": "pooled_baseline", "k_pooled": 4, "k_wide": 3, "k_narrow": 3,
            "max_iters": 5, "emit_figures": False,
        }))
        out = tmp_path / "out"
        code, report, _ = run_cli(
            capsys, "pipeline", "--manifest", manifest, "--out-dir", out,
            "--config", cfg, "--mode", "channel_aware",
        )
        assert code == 0
        effective = json.loads((out / "effective_config.json").read_text())
        assert effective["mode"] == "channel_aware"
        assert effective["k_pooled"] == 4
        assert "out_dir" not in effective

    def test_unknown_config_key(self, tmp_path, capsys):
        manifest = build_corpus(tmp_path, capsys, n_wide=1, n_narrow=1)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"mode": "channel_aware", "clusters": 8}))
        code, _, err = run_cli(
            capsys, "pipeline", "--manifest", manifest, "--out-dir", tmp_path / "o",
            "--config", cfg,
        )
        assert code == 2 and "clusters" in err

    def test_empty_manifest_exit_2(self, tmp_path, capsys):
        save_manifest(tmp_path / "m.tsv", [])
        code, _, err = run_cli(
            capsys, "pipeline", "--manifest", tmp_path / "m.tsv",
            "--out-dir", tmp_path / "o",
        )
        assert code == 2

    def test_channel_rate_mismatch(self, tmp_path, capsys):
        synth(capsys, tmp_path / "w.wav", rate=16000, duration=0.2)
        save_manifest(tmp_path / "m.tsv", [UtteranceRecord("w", "w.wav", "narrow")])
        code, _, err = run_cli(
            capsys, "pipeline", "--manifest", tmp_path / "m.tsv",
            "--out-dir", tmp_path / "o", "--mode", "pooled_baseline",
            "--k-pooled", 2, "--max-iters", 3,
        )
        assert code == 2 and "narrow" in err

    def test_missing_audio_file_exit_2(self, tmp_path, capsys):
        save_manifest(tmp_path / "m.tsv", [UtteranceRecord("w", "gone.wav", "wide")])
        code, _, err = run_cli(
            capsys, "pipeline", "--manifest", tmp_path / "m.tsv",
            "--out-dir", tmp_path / "o",
        )
        assert code == 2 and "gone.wav" in err
