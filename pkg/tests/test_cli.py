import json

import numpy as np
import pytest

from voicelr.audio import AudioSignal, save_wav
from voicelr.cli import main
from voicelr.core import (Manifest, RecordingMeta, read_embeddings_jsonl,
                          read_manifest, read_scores, read_trials,
                          write_embeddings_jsonl, write_manifest,
                          write_scores, write_trials)
from voicelr.core import ScoredTrial, Trial

from test_evaluation import build_cluster

SR = 16000


def make_recording(path, seed, voiced_s, sr=SR):
    """Two constant-amplitude tone-mixture segments around a silence gap."""
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(150.0, 3500.0, 4)
    amps = rng.uniform(0.08, 0.22, 4)
    t = np.arange(int(voiced_s / 2 * sr)) / sr
    seg = sum(a * np.sin(2.0 * np.pi * f * t) for a, f in zip(amps, freqs))
    x = np.concatenate([seg, np.zeros(sr // 2), seg])
    save_wav(AudioSignal(x, sr), path)


def raw_manifest(root, speakers=("alice", "bob"), voiced_s=12.0):
    wav_dir = root / "raw"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, spk in enumerate(speakers):
        for session in (1, 2):
            rid = f"{spk}_r{session}1"
            path = wav_dir / f"{rid}.wav"
            make_recording(path, seed=100 * i + session, voiced_s=voiced_s)
            rows.append(RecordingMeta(rid, spk, session, 1, str(path), SR))
    man_path = root / "raw.csv"
    write_manifest(Manifest("toy", "evaluation", rows), man_path)
    return man_path


@pytest.fixture(scope="module")
def staged(tmp_path_factory):
    """prep -> embed -> enroll -> trials -> score -> calibrate, chained."""
    root = tmp_path_factory.mktemp("staged")
    paths = {
        "root": root,
        "raw": raw_manifest(root),
        "chunks": root / "chunks" / "chunks.csv",
        "emb": root / "emb.jsonl",
        "enroll": root / "enroll.jsonl",
        "trials": root / "trials.csv",
        "scores": root / "scores.csv",
        "model": root / "calibration.json",
    }
    steps = [
        ["prep", "--manifest", str(paths["raw"]),
         "--out-dir", str(root / "chunks")],
        ["embed", "--manifest", str(paths["chunks"]),
         "--out", str(paths["emb"])],
        ["enroll", "--embeddings", str(paths["emb"]),
         "--out", str(paths["enroll"])],
        ["trials", "--manifest", str(paths["chunks"]), "--mode", "pairwise",
         "--embeddings", str(paths["emb"]), "--out", str(paths["trials"])],
        ["score", "--trials", str(paths["trials"]),
         "--embeddings", str(paths["emb"]), "--out", str(paths["scores"])],
        ["calibrate", "--scores", str(paths["scores"]),
         "--out", str(paths["model"])],
    ]
    for argv in steps:
        assert main(argv) == 0, argv[0]
    return paths


class TestPrep:

    def test_thirty_second_recording(self, tmp_path, capsys):
        wav = tmp_path / "one.wav"
        make_recording(wav, seed=7, voiced_s=30.0)
        man = tmp_path / "one.csv"
        write_manifest(Manifest("one", "evaluation",
                                [RecordingMeta("solo_r11", "solo", 1, 1,
                                               str(wav), SR)]), man)
        out = tmp_path / "out"
        assert main(["prep", "--manifest", str(man),
                     "--out-dir", str(out)]) == 0
        chunks = read_manifest(out / "chunks.csv")
        assert len(chunks.recordings) > 0
        for r in chunks.recordings:
            assert round(r.duration_s) in range(2, 11)
            assert abs(r.duration_s - round(r.duration_s)) < 0.01
            assert (out / "wav" / f"{r.recording_id}.wav").exists()
            assert r.path == str(out / "wav" / f"{r.recording_id}.wav")
        assert not (out / ".voicelr.lock").exists()
        assert "chunks" in capsys.readouterr().out

    def test_missing_wav_strict_leaves_no_partial_outputs(self, tmp_path):
        good = tmp_path / "good.wav"
        make_recording(good, seed=3, voiced_s=8.0)
        rows = [RecordingMeta("a_r11", "a", 1, 1, str(good), SR),
                RecordingMeta("b_r11", "b", 1, 1,
                              str(tmp_path / "gone.wav"), SR)]
        man = tmp_path / "m.csv"
        write_manifest(Manifest("m", "evaluation", rows), man)
        out = tmp_path / "out"
        assert main(["prep", "--manifest", str(man), "--out-dir", str(out),
                     "--strict"]) == 1
        assert list(out.iterdir()) == []

    def test_missing_wav_skipped_without_strict(self, tmp_path):
        good = tmp_path / "good.wav"
        make_recording(good, seed=3, voiced_s=8.0)
        rows = [RecordingMeta("a_r11", "a", 1, 1, str(good), SR),
                RecordingMeta("b_r11", "b", 1, 1,
                              str(tmp_path / "gone.wav"), SR)]
        man = tmp_path / "m.csv"
        write_manifest(Manifest("m", "evaluation", rows), man)
        out = tmp_path / "out"
        assert main(["prep", "--manifest", str(man),
                     "--out-dir", str(out)]) == 0
        chunks = read_manifest(out / "chunks.csv")
        assert len(chunks.recordings) > 0
        assert all(r.recording_id.startswith("a_r11")
                   for r in chunks.recordings)

    def test_augment_quadruples_chunk_count(self, tmp_path):
        man = raw_manifest(tmp_path, speakers=("solo",), voiced_s=10.0)
        plain_out = tmp_path / "plain"
        aug_out = tmp_path / "aug"
        assert main(["prep", "--manifest", str(man),
                     "--out-dir", str(plain_out)]) == 0
        assert main(["prep", "--manifest", str(man), "--out-dir",
                     str(aug_out), "--augment", "--seed", "99"]) == 0
        plain = read_manifest(plain_out / "chunks.csv").recordings
        aug = read_manifest(aug_out / "chunks.csv").recordings
        assert len(aug) == 4 * len(plain)
        for suffix in ("_ts095", "_ts105", "_ns15"):
            tagged = [r for r in aug if r.recording_id.endswith(suffix)]
            assert len(tagged) == len(plain)

    def test_rerun_overwrites_with_identical_bytes(self, tmp_path):
        man = raw_manifest(tmp_path, speakers=("solo",), voiced_s=8.0)
        out = tmp_path / "out"
        argv = ["prep", "--manifest", str(man), "--out-dir", str(out),
                "--augment", "--seed", "5"]
        assert main(argv) == 0
        first_csv = (out / "chunks.csv").read_bytes()
        wav_name = read_manifest(out / "chunks.csv").recordings[-1]
        first_wav = (out / "wav" / f"{wav_name.recording_id}.wav").read_bytes()
        assert main(argv) == 0
        assert (out / "chunks.csv").read_bytes() == first_csv
        assert (out / "wav"
                / f"{wav_name.recording_id}.wav").read_bytes() == first_wav


class TestStagedPipeline:

    def test_embeddings_cover_all_chunks(self, staged):
        chunks = read_manifest(staged["chunks"]).recordings
        records = read_embeddings_jsonl(staged["emb"])
        assert {r.sample_id for r in records} == {c.recording_id
                                                  for c in chunks}
        assert all(r.dim == 48 for r in records)

    def test_enrollments_one_per_speaker(self, staged):
        records = read_embeddings_jsonl(staged["enroll"])
        assert sorted(r.sample_id for r in records) == ["enroll:alice",
                                                        "enroll:bob"]
        assert all(r.task == 0 for r in records)

    def test_trials_cross_session_counts(self, staged):
        trials = read_trials(staged["trials"])
        chunks = read_manifest(staged["chunks"]).recordings
        n1 = sum(1 for c in chunks if c.session == 1)
        n2 = sum(1 for c in chunks if c.session == 2)
        assert len(trials) == n1 * n2

    def test_scores_cover_trials(self, staged):
        assert len(read_scores(staged["scores"])) == len(
            read_trials(staged["trials"]))

    def test_calibration_model_is_finite(self, staged):
        model = json.loads(staged["model"].read_text())
        assert np.isfinite(model["weight"])
        assert np.isfinite(model["bias"])
        assert model["n_same"] > 0 and model["n_diff"] > 0

    def test_report_recomputes_from_artifacts(self, staged, capsys):
        out = staged["root"] / "report_out"
        assert main(["report", "--scores", str(staged["scores"]),
                     "--model", str(staged["model"]),
                     "--embeddings", str(staged["emb"]),
                     "--mode", "pairwise", "--out-dir", str(out)]) == 0
        payload = json.loads((out / "report.json").read_text())
        g = payload["global"]
        assert g["cllr_min"] <= g["cllr"] + 1e-12
        assert 0.0 <= g["eer"] <= 1.0
        assert (out / "tippet.csv").exists()
        assert (out / "matrix_duration_eer.csv").exists()
        assert "cllr_min" in capsys.readouterr().out

    def test_enrollment_trials_scoreable(self, staged):
        out = staged["root"] / "enroll_trials.csv"
        scores_out = staged["root"] / "enroll_scores.csv"
        assert main(["trials", "--manifest", str(staged["chunks"]),
                     "--mode", "enrollment", "--out", str(out)]) == 0
        assert main(["score", "--trials", str(out),
                     "--embeddings", str(staged["emb"]),
                     "--enrollments", str(staged["enroll"]),
                     "--out", str(scores_out)]) == 0
        scored = read_scores(scores_out)
        assert scored
        assert all(t.known_ref.startswith("enroll:") for t in scored)


class TestExitCodes:

    def test_empty_trials_is_validation_failure(self, tmp_path, capsys):
        trials = tmp_path / "t.csv"
        write_trials([], trials)
        emb = tmp_path / "e.jsonl"
        write_embeddings_jsonl([], emb)
        rc = main(["score", "--trials", str(trials), "--embeddings",
                   str(emb), "--out", str(tmp_path / "s.csv")])
        assert rc == 2
        assert "empty trial set" in capsys.readouterr().err

    def test_single_class_scores_is_degenerate(self, tmp_path):
        scores = tmp_path / "s.csv"
        write_scores([ScoredTrial(f"k{i}", f"u{i}", "same-origin",
                                  0.1 * i) for i in range(10)], scores)
        rc = main(["calibrate", "--scores", str(scores),
                   "--out", str(tmp_path / "m.json")])
        assert rc == 3

    def test_missing_input_file_is_io_failure(self, tmp_path):
        rc = main(["embed", "--manifest", str(tmp_path / "absent.csv"),
                   "--out", str(tmp_path / "e.jsonl")])
        assert rc == 1

    def test_missing_required_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["trials"])
        assert err.value.code == 2

    def test_lock_conflict_is_io_failure(self, tmp_path, capsys):
        out = tmp_path / "out"
        out.mkdir()
        (out / ".voicelr.lock").write_text("12345")
        man = raw_manifest(tmp_path, speakers=("solo",), voiced_s=8.0)
        rc = main(["prep", "--manifest", str(man), "--out-dir", str(out)])
        assert rc == 1
        assert "in use" in capsys.readouterr().err
        # a foreign lock is never removed
        assert (out / ".voicelr.lock").read_text() == "12345"


class TestConfigFile:

    def test_section_fills_unset_flags_but_explicit_wins(self, tmp_path,
                                                         capsys):
        records, rows = build_cluster(n_eval=3, n_cal=2)
        man = tmp_path / "ev.csv"
        write_manifest(Manifest("ev", "evaluation", rows["ev"]), man)
        decoy = tmp_path / "decoy.csv"
        real = tmp_path / "real.csv"
        ini = tmp_path / "conf.ini"
        ini.write_text(f"[trials]\nmanifest = {man}\nmode = pairwise\n"
                       f"out = {decoy}\n")
        assert main(["--config", str(ini), "trials",
                     "--out", str(real)]) == 0
        assert real.exists()
        assert not decoy.exists()
        assert "[trials] mode = pairwise" in capsys.readouterr().out

    def test_missing_config_file_is_io_failure(self, tmp_path):
        rc = main(["--config", str(tmp_path / "nope.ini"), "trials",
                   "--manifest", "x", "--mode", "pairwise", "--out", "y"])
        assert rc == 1

    def test_help_lists_output_affecting_flags(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["prep", "--help"])
        assert err.value.code == 0
        text = capsys.readouterr().out
        for flag in ("--manifest", "--out-dir", "--frame-ms", "--hop-ms",
                     "--threshold-db", "--augment", "--time-scales",
                     "--snr-db", "--seed", "--strict"):
            assert flag in text


class TestEvaluateCommand:

    def test_end_to_end_on_cluster_fixture(self, tmp_path, capsys):
        records, rows = build_cluster(n_eval=4, n_cal=3)
        cal = tmp_path / "cal.csv"
        ev = tmp_path / "ev.csv"
        emb = tmp_path / "emb.jsonl"
        write_manifest(Manifest("cal", "calibration", rows["cal"]), cal)
        write_manifest(Manifest("ev", "evaluation", rows["ev"]), ev)
        write_embeddings_jsonl(records, emb)
        out = tmp_path / "out"
        rc = main(["evaluate", "--mode", "pairwise",
                   "--calibration-manifest", str(cal),
                   "--evaluation-manifest", str(ev),
                   "--embeddings", str(emb), "--out-dir", str(out)])
        assert rc == 0
        assert (out / "report.json").exists()
        assert (out / "effective_config.ini").exists()
        assert not (out / ".voicelr.lock").exists()
        printed = capsys.readouterr().out
        assert "eer" in printed and "cllr_cal" in printed

        # an independent pass over the emitted artifacts must agree
        out2 = tmp_path / "out2"
        assert main(["report", "--scores", str(out / "scores.csv"),
                     "--model", str(out / "calibration.json"),
                     "--out-dir", str(out2)]) == 0
        first = json.loads((out / "report.json").read_text())["global"]
        second = json.loads((out2 / "report.json").read_text())["global"]
        for key in ("eer", "cllr", "cllr_min", "cllr_cal", "n_trials"):
            assert second[key] == first[key], key
