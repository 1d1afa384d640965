"""Tests for the command-line front end.

Each subcommand is driven through main(argv) in-process so exit codes,
stdout, and written artifacts can all be asserted; one subprocess smoke
test confirms the module is runnable outside the test harness.
"""
import json
import subprocess
import sys

import numpy as np
import pytest

from synthspeaker import checkpoint as ckpt
from synthspeaker.checkpoint import load_checkpoint, meta_value
from synthspeaker.cli import build_parser, main
from synthspeaker.dataset import load_dataset, save_dataset, serialize_row

from conftest import gaussian_speaker, pcm16_wav_bytes


def sine_wav(path, freq=440.0, seconds=0.5, rate=16000):
    t = np.arange(int(rate * seconds)) / rate
    path.write_bytes(pcm16_wav_bytes(0.4 * np.sin(2 * np.pi * freq * t), rate))
    return str(path)


@pytest.fixture(scope="module")
def trained_lstm_ckpt(tmp_path_factory):
    """A small generator checkpoint trained once via the CLI itself."""
    root = tmp_path_factory.mktemp("cli-gen")
    corpus_path = root / "corpus.txt"
    corpus_path.write_text(serialize_row(np.arange(26) * 1.11, 1) * 120)
    out = root / "gen.ckpt"
    curve = root / "curve.csv"
    rc = main([
        "train-gen", "--model", "lstm", "--corpus", str(corpus_path),
        "--out", str(out), "--curve", str(curve), "--seed", "0",
        "--units", "32", "--layers", "1", "--epochs", "60",
        "--seq-len", "113", "--lr", "5e-3",
    ])
    assert rc == 0
    return {"ckpt": out, "curve": curve, "corpus": corpus_path}


class TestParser:
    def test_missing_subcommand_exits(self):
        with pytest.raises(SystemExit):
            main([])

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["--help"])
        assert exc.value.code == 0

    def test_module_is_runnable(self):
        proc = subprocess.run(
            [sys.executable, "-m", "synthspeaker.cli", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "extract" in proc.stdout
        assert "run-matrix" in proc.stdout


class TestExtract:
    def test_wav_to_labeled_rows(self, tmp_path, capsys):
        wav = sine_wav(tmp_path / "a.wav")
        out = tmp_path / "rows.csv"
        rc = main(["extract", wav, "--out", str(out), "--label", "1"])
        assert rc == 0
        ds, _ = load_dataset(out, "real-positive")
        assert len(ds) > 0
        assert ds.features.shape[1] == 26
        assert np.all(ds.labels == 1)
        assert f"wrote {len(ds)} rows" in capsys.readouterr().out

    def test_negative_label_and_trim(self, tmp_path):
        wav = sine_wav(tmp_path / "b.wav", seconds=0.8)
        out = tmp_path / "rows.csv"
        rc = main(["extract", wav, "--out", str(out), "--label", "0",
                   "--trim"])
        assert rc == 0
        ds, _ = load_dataset(out, "real-negative")
        assert np.all(ds.labels == 0)

    def test_multiple_files_concatenate(self, tmp_path):
        wavs = [sine_wav(tmp_path / "a.wav", seconds=0.3),
                sine_wav(tmp_path / "b.wav", freq=700.0, seconds=0.3)]
        solo = tmp_path / "solo.csv"
        both = tmp_path / "both.csv"
        assert main(["extract", wavs[0], "--out", str(solo)]) == 0
        assert main(["extract", *wavs, "--out", str(both)]) == 0
        n_solo = len(load_dataset(solo, "x")[0])
        n_both = len(load_dataset(both, "x")[0])
        assert n_both > n_solo

    def test_unreadable_file_fails_but_continues(self, tmp_path, capsys):
        good = sine_wav(tmp_path / "good.wav")
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"not a wav stream")
        out = tmp_path / "rows.csv"
        rc = main(["extract", str(bad), good, "--out", str(out)])
        assert rc == 1
        captured = capsys.readouterr()
        assert "error:" in captured.err
        assert out.exists()
        assert len(load_dataset(out, "x")[0]) > 0


class TestTrainGen:
    def test_checkpoint_and_curve_written(self, trained_lstm_ckpt):
        tensors = dict(load_checkpoint(trained_lstm_ckpt["ckpt"]))
        assert meta_value(tensors, "kind") == 1.0
        lines = trained_lstm_ckpt["curve"].read_text().strip().split("\n")
        assert lines[0] == "epoch,loss"
        assert len(lines) == 61
        assert lines[1].startswith("1,")

    def test_progress_message(self, trained_lstm_ckpt, capsys):
        corpus = trained_lstm_ckpt["corpus"]
        out = trained_lstm_ckpt["ckpt"].parent / "tiny.ckpt"
        rc = main(["train-gen", "--model", "lstm", "--corpus", str(corpus),
                   "--out", str(out), "--units", "8", "--epochs", "2",
                   "--seq-len", "50"])
        assert rc == 0
        output = capsys.readouterr().out
        assert "trained lstm for 2 epochs" in output
        assert "best loss" in output

    def test_gpt_checkpoint_kind(self, trained_lstm_ckpt):
        corpus = trained_lstm_ckpt["corpus"]
        out = trained_lstm_ckpt["ckpt"].parent / "gpt.ckpt"
        rc = main(["train-gen", "--model", "gpt", "--corpus", str(corpus),
                   "--out", str(out), "--d-model", "16", "--heads", "2",
                   "--layers", "1", "--context", "256", "--epochs", "2",
                   "--batch-size", "8"])
        assert rc == 0
        tensors = dict(load_checkpoint(out))
        assert meta_value(tensors, "kind") == 2.0
        assert meta_value(tensors, "d_model") == 16.0

    def test_invalid_corpus_characters_exit_one(self, tmp_path, capsys):
        corpus = tmp_path / "bad.txt"
        corpus.write_text("hello world\n")
        rc = main(["train-gen", "--model", "lstm", "--corpus", str(corpus),
                   "--out", str(tmp_path / "x.ckpt"), "--units", "8",
                   "--epochs", "1", "--seq-len", "4"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestGenerate:
    def test_rows_and_stats_sidecar(self, trained_lstm_ckpt, tmp_path, capsys):
        out = tmp_path / "synthetic.csv"
        rc = main(["generate", "--ckpt", str(trained_lstm_ckpt["ckpt"]),
                   "--rows", "5", "--out", str(out), "--seed", "5",
                   "--batch", "4"])
        assert rc == 0
        ds, _ = load_dataset(out, "synthetic")
        assert len(ds) == 5
        assert np.all(ds.labels == 1)
        stats = json.loads((tmp_path / "synthetic.csv.stats.json").read_text())
        assert set(stats) == {"blocks_drawn", "rows_kept", "lines_rejected",
                              "rejection_rate"}
        assert stats["rows_kept"] == 5
        assert "rows=5" in capsys.readouterr().out

    def test_same_seed_reproduces_rows(self, trained_lstm_ckpt, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            rc = main(["generate", "--ckpt", str(trained_lstm_ckpt["ckpt"]),
                       "--rows", "4", "--out", str(out), "--seed", "9",
                       "--batch", "4"])
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_temperature_exits_one(self, trained_lstm_ckpt, tmp_path,
                                       capsys):
        rc = main(["generate", "--ckpt", str(trained_lstm_ckpt["ckpt"]),
                   "--rows", "2", "--out", str(tmp_path / "x.csv"),
                   "--temperature", "-1.0"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_classifier_checkpoint_rejected(self, tmp_path, capsys):
        from synthspeaker.classifier import build_mlp, classifier_to_tensors

        path = tmp_path / "clf.ckpt"
        ckpt.save_checkpoint(path, classifier_to_tensors(build_mlp(0)))
        rc = main(["generate", "--ckpt", str(path), "--rows", "2",
                   "--out", str(tmp_path / "x.csv")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def matrix_run(tmp_path_factory):
    """A generator-free grid driven end to end through the CLI."""
    root = tmp_path_factory.mktemp("cli-matrix")
    pos = gaussian_speaker(np.full(26, 2.0), np.full(26, 0.5), 80, 1, seed=0)
    neg = gaussian_speaker(np.full(26, -2.0), np.full(26, 0.5), 1500, 0,
                           seed=1)
    save_dataset(root / "pos.csv", pos)
    save_dataset(root / "neg.csv", neg)
    config = {
        "schema_version": 1,
        "subject": "cli-subj",
        "positive_csv": str(root / "pos.csv"),
        "negative_csv": str(root / "neg.csv"),
        "out_dir": str(root / "unused"),
        "generators": [],
        "sizes": [0],
        "seeds": [0],
        "negative_target": 1000,
        "max_epochs": 3,
        "rf_trees": 2,
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config))
    out_dir = root / "runs"
    rc = main(["run-matrix", "--config", str(cfg_path),
               "--out", str(out_dir)])
    return {"rc": rc, "root": root, "cfg_path": cfg_path, "out_dir": out_dir}


class TestRunMatrix:
    def test_exit_zero_and_reports_written(self, matrix_run):
        assert matrix_run["rc"] == 0
        assert (matrix_run["out_dir"] / "report.md").exists()
        assert (matrix_run["out_dir"] / "report.csv").exists()

    def test_out_flag_overrides_config_dir(self, matrix_run):
        assert not (matrix_run["root"] / "unused").exists()
        status = (matrix_run["out_dir"] / "cli-subj" / "seed-0" / "baseline"
                  / "0" / "status.json")
        assert status.exists()
        assert json.loads(status.read_text())["ok"]

    def test_bad_config_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"schema_version": 99}))
        rc = main(["run-matrix", "--config", str(bad)])
        assert rc == 1
        assert "schema_version" in capsys.readouterr().err


class TestReport:
    def test_rerender_matches_run_output(self, matrix_run, tmp_path, capsys):
        original = (matrix_run["out_dir"] / "report.md").read_text()
        (matrix_run["out_dir"] / "report.md").unlink()
        rc = main(["report", "--runs", str(matrix_run["out_dir"])])
        assert rc == 0
        assert (matrix_run["out_dir"] / "report.md").read_text() == original
        assert "wrote" in capsys.readouterr().out

    def test_single_format_to_explicit_path(self, matrix_run, tmp_path):
        out = tmp_path / "only.csv"
        rc = main(["report", "--runs", str(matrix_run["out_dir"]),
                   "--format", "csv", "--out", str(out)])
        assert rc == 0
        text = out.read_text()
        assert text.startswith("table,subject,seed,")
        assert text == (matrix_run["out_dir"] / "report.csv").read_text()
