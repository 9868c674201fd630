import json

import pytest

from ignition.cli import derive_seed, main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "oval64"
    assert main(["synth", "--track", "oval", "--duration", "10",
                 "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "model.json"
    path.write_text(json.dumps({
        "input_width": 64, "input_height": 36, "base_channels": 4,
        "stage_blocks": [1, 1, 1, 1], "fc_dim": 8,
        "velocity_input": True, "head": "classification",
    }))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir, tiny_config):
    out = tmp_path_factory.mktemp("runs") / "r1"
    assert main(["train", "--data", str(data_dir), "--config", str(tiny_config),
                 "--epochs", "1", "--batch-size", "32", "--seed", "7",
                 "--out", str(out)]) == 0
    return out


class TestUsage:
    def test_no_args_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert main(["launch"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["synth", "--duration", "1", "--warp", "9"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_help_available_on_subcommands(self):
        for cmd in ("synth", "stats", "train", "evaluate", "drive", "render", "serve"):
            with pytest.raises(SystemExit) as e:
                main([cmd, "--help"])
            assert e.value.code == 0


class TestSeeds:
    def test_derived_seeds_stable_and_distinct(self):
        assert derive_seed(7, "synth") == derive_seed(7, "synth")
        assert derive_seed(7, "synth") != derive_seed(7, "train")
        assert derive_seed(7, "synth") != derive_seed(8, "synth")


class TestSynth:
    def test_byte_identical_datasets(self, data_dir, tmp_path):
        again = tmp_path / "again"
        assert main(["synth", "--track", "oval", "--duration", "10",
                     "--seed", "7", "--out", str(again)]) == 0
        assert (again / "records.bin").read_bytes() == \
            (data_dir / "records.bin").read_bytes()
        assert (again / "manifest.json").read_bytes() == \
            (data_dir / "manifest.json").read_bytes()

    def test_resolved_config_written(self, data_dir):
        cfg = json.loads((data_dir / "resolved_config.json").read_text())
        assert cfg["command"] == "synth"
        assert cfg["seed"] == 7

    def test_bad_size_is_runtime_error(self, tmp_path, capsys):
        assert main(["synth", "--duration", "1", "--size", "huge",
                     "--out", str(tmp_path / "x")]) == 2
        assert "size" in capsys.readouterr().err

    def test_bad_track_path(self, tmp_path):
        assert main(["synth", "--duration", "1", "--track", "nowhere.json",
                     "--out", str(tmp_path / "x")]) == 2


class TestStats:
    def test_prints_and_writes_stats(self, data_dir, capsys):
        assert main(["stats", "--data", str(data_dir)]) == 0
        out = capsys.readouterr().out
        assert "steering mean" in out
        assert "co-occurrence" in out
        stats = json.loads((data_dir / "stats.json").read_text())
        assert len(stats["steering_hist"]) == 36
        assert stats["extreme_pedal_fraction"] == 1.0

    def test_missing_dataset(self, tmp_path):
        assert main(["stats", "--data", str(tmp_path / "nope")]) == 2


class TestTrain:
    def test_artifacts_written(self, run_dir):
        for name in ("final.ckpt", "best.ckpt", "metrics.jsonl", "resolved_config.json"):
            assert (run_dir / name).exists(), name

    def test_resume_geometry_mismatch_exits_2(self, run_dir, tmp_path, capsys):
        wide = tmp_path / "wide"
        assert main(["synth", "--track", "oval", "--duration", "2",
                     "--size", "160x90", "--seed", "1", "--out", str(wide)]) == 0
        rc = main(["train", "--data", str(wide), "--resume",
                   str(run_dir / "final.ckpt"), "--epochs", "1",
                   "--out", str(tmp_path / "r2")])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_classification_probe(self, data_dir, tiny_config, tmp_path, capsys):
        out = tmp_path / "probe"
        assert main(["train", "--data", str(data_dir), "--config", str(tiny_config),
                     "--probe", "classification", "--seed", "3",
                     "--out", str(out)]) == 0
        result = json.loads((out / "probe.json").read_text())
        assert {"steps_to_perfect", "steer_accuracy", "accel_accuracy"} <= set(result)


class TestEvaluate:
    def test_report_written(self, run_dir, data_dir, tmp_path, capsys):
        report = tmp_path / "report.json"
        assert main(["evaluate", "--ckpt", str(run_dir / "final.ckpt"),
                     "--data", str(data_dir), "--split", "test",
                     "--report", str(report)]) == 0
        metrics = json.loads(report.read_text())
        assert {"val_loss", "accel_accuracy", "steering_within_20deg"} <= set(metrics)

    def test_missing_checkpoint(self, data_dir):
        assert main(["evaluate", "--ckpt", "nope.ckpt", "--data", str(data_dir)]) == 2


class TestDrive:
    def test_oracle_bypass_report(self, tmp_path, capsys):
        report = tmp_path / "drive.json"
        traj = tmp_path / "traj.csv"
        assert main(["drive", "--track", "oval", "--oracle-bypass",
                     "--duration", "5", "--report", str(report),
                     "--trajectory", str(traj)]) == 0
        d = json.loads(report.read_text())
        assert d["interventions"] == 0
        assert traj.read_text().startswith("step,x,y,heading")

    def test_model_drive(self, run_dir, tmp_path, capsys):
        report = tmp_path / "drive.json"
        assert main(["drive", "--track", "oval", "--ckpt",
                     str(run_dir / "final.ckpt"), "--duration", "2",
                     "--report", str(report)]) == 0
        assert "laps_completed" in json.loads(report.read_text())

    def test_missing_ckpt_without_bypass(self, capsys):
        assert main(["drive", "--track", "oval", "--duration", "1"]) == 2
        assert "ckpt" in capsys.readouterr().err


class TestRender:
    def test_writes_pgm(self, tmp_path, capsys):
        out = tmp_path / "frame.pgm"
        assert main(["render", "--track", "oval", "--s", "40",
                     "--size", "64x36", "--out", str(out)]) == 0
        data = out.read_bytes()
        assert data.startswith(b"P5\n")
        assert b"64 36" in data[:20]
