import os

import numpy as np
import pytest
import yaml

from lowfield.cli import main
from lowfield.config import load_config, resolve_output_dir
from lowfield.metrics import read_metrics_csv
from lowfield.train import TrainHistory
from lowfield.volume import load_volume


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def phantom_dir(tmp_path):
    d = tmp_path / "phantoms"
    assert run("phantom", "--out-dir", d, "--count", "3", "--grid-size", "16", "16", "16") == 0
    return d


@pytest.fixture
def sim_dir(tmp_path, phantom_dir):
    d = tmp_path / "sim"
    assert (
        run(
            "simulate",
            "--in-dir", phantom_dir,
            "--out-dir", d,
            "--target-snr", "5",
            "--target-spacing", "1", "1", "1",
        )
        == 0
    )
    return d


class TestPhantom:
    def test_writes_count_files(self, phantom_dir):
        files = sorted(os.listdir(phantom_dir))
        assert files == ["phantom_000.nii.gz", "phantom_001.nii.gz", "phantom_002.nii.gz"]
        v = load_volume(phantom_dir / files[0])
        assert v.shape == (16, 16, 16)


class TestSimulate:
    def test_outputs_and_manifest(self, sim_dir):
        assert sorted(os.listdir(sim_dir / "low")) == sorted(os.listdir(sim_dir / "reference"))
        assert len(os.listdir(sim_dir / "low")) == 3
        manifest = (sim_dir / "manifest.csv").read_text().splitlines()
        assert manifest[0] == "input,output,sigma,spacing,seed"
        assert len(manifest) == 4
        assert (sim_dir / "resolved_config.yaml").exists()

    def test_rerun_is_bit_identical(self, tmp_path, phantom_dir):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert run("simulate", "--in-dir", phantom_dir, "--out-dir", out,
                       "--target-spacing", "1", "1", "1") == 0
        for name in os.listdir(out_a / "low"):
            assert (out_a / "low" / name).read_bytes() == (out_b / "low" / name).read_bytes()

    def test_too_coarse_spacing_fails(self, tmp_path, phantom_dir, capsys):
        code = run("simulate", "--in-dir", phantom_dir, "--out-dir", tmp_path / "x",
                   "--target-spacing", "99", "99", "99")
        assert code != 0
        assert "coarse" in capsys.readouterr().err

    def test_missing_input_dir(self, tmp_path):
        assert run("simulate", "--in-dir", tmp_path / "nope", "--out-dir", tmp_path / "y") == 1


@pytest.fixture
def train_config(tmp_path):
    cfg = {
        "seed": 0,
        "generator": {"base_channels": 4, "spatial_rank": "2D"},
        "discriminator": {"base_channels": 4, "num_layers": 2, "spatial_rank": "2D"},
        "dae": {"base_channels": 4, "depth": 2, "spatial_rank": "2D"},
        "training": {"epochs": 2, "batch_size": 8, "seed": 0},
    }
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestTrainCommands:
    def test_train_cyclegan_artifacts(self, tmp_path, sim_dir, train_config):
        out = tmp_path / "run_cg"
        code = run("train-cyclegan", "--config", train_config,
                   "--low-dir", sim_dir / "low", "--high-dir", sim_dir / "reference",
                   "--out-dir", out)
        assert code == 0
        assert (out / "history.csv").exists()
        assert (out / "resolved_config.yaml").exists()
        assert (out / "checkpoints" / "g_low2high_final.pt").exists()
        assert len(TrainHistory.from_csv(out / "history.csv")) == 2

    def test_resume_continues_epoch_numbering(self, tmp_path, sim_dir, train_config):
        out = tmp_path / "run_dae"
        args = ("train-dae", "--config", train_config,
                "--low-dir", sim_dir / "low", "--reference-dir", sim_dir / "reference",
                "--out-dir", out)
        assert run(*args) == 0
        assert run(*args, "--resume") == 0
        epochs = [r["epoch"] for r in TrainHistory.from_csv(out / "history.csv").records]
        assert epochs == [1, 2, 3, 4]

    def test_missing_data_dir_fails(self, tmp_path, train_config):
        assert run("train-dae", "--config", train_config,
                   "--low-dir", tmp_path / "nope", "--reference-dir", tmp_path / "nope",
                   "--out-dir", tmp_path / "o") != 0


class TestEvaluateCompareReport:
    def test_identity_stub_equals_baseline(self, tmp_path, sim_dir):
        out_csv = tmp_path / "metrics.csv"
        code = run("evaluate", "--checkpoint", "identity",
                   "--low-dir", sim_dir / "low", "--reference-dir", sim_dir / "reference",
                   "--out", out_csv)
        assert code == 0
        records = read_metrics_csv(out_csv)
        baseline = [r for r in records if r.model == "noisy_baseline"]
        ident = [r for r in records if r.model == "identity"]
        assert len(baseline) == len(ident) == 3
        for b, i in zip(baseline, ident):
            assert (b.ssim, b.psnr_db) == (i.ssim, i.psnr_db)

    def test_compare_with_itself_zero_diffs(self, tmp_path, sim_dir, capsys):
        out_csv = tmp_path / "metrics.csv"
        run("evaluate", "--checkpoint", "identity", "--low-dir", sim_dir / "low",
            "--reference-dir", sim_dir / "reference", "--out", out_csv)
        summary_path = tmp_path / "summary.json"
        code = run("compare", out_csv, out_csv, "--model-a", "noisy_baseline",
                   "--model-b", "noisy_baseline", "--out", summary_path)
        assert code == 0
        import json

        summary = json.loads(summary_path.read_text())
        assert summary["psnr_pct_diff"] == 0.0
        assert summary["ssim_pct_diff"] == 0.0

    def test_report_generates_figures(self, tmp_path, sim_dir):
        out_csv = tmp_path / "metrics.csv"
        run("evaluate", "--checkpoint", "identity", "--low-dir", sim_dir / "low",
            "--reference-dir", sim_dir / "reference", "--out", out_csv)
        low_name = sorted(os.listdir(sim_dir / "low"))[0]
        out = tmp_path / "report"
        code = run("report", "--metrics-csv", out_csv, "--out-dir", out,
                   "--panel", f"low={sim_dir / 'low' / low_name}",
                   f"reference={sim_dir / 'reference' / low_name}")
        assert code == 0
        assert (out / "histograms.png").exists()
        assert (out / "panel.png").exists()
        assert (out / "panel.json").exists()


class TestConfig:
    def test_flags_override_file(self, tmp_path, train_config):
        cfg = load_config(train_config, {"training.epochs": 7, "seed": 3})
        assert cfg.training.epochs == 7
        assert cfg.seed == 3
        assert cfg.generator.base_channels == 4  # file value survives

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("bogus: 1\n")
        with pytest.raises(ValueError, match="bogus"):
            load_config(path)

    def test_output_root_env(self, monkeypatch):
        monkeypatch.setenv("LOWFIELD_OUTPUT_ROOT", "/data/out")
        assert resolve_output_dir("runs/x") == "/data/out/runs/x"
        assert resolve_output_dir("/abs/x") == "/abs/x"

    def test_unknown_command_usage_error(self):
        assert run("frobnicate") == 1
