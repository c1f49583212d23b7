import json
import subprocess
import sys

import pytest
import yaml

from upgan.cli import main
from upgan.config import ConfigError, config_from_dict, load_config
from upgan.dataset import DatasetManifest

TINY = {
    "task": "procedural",
    "seed": 3,
    "data": {"num_subjects": 7, "slices_per_subject": 3, "image_size": 16,
             "split_counts": [3, 2, 2]},
    "train": {"phases": 2, "epochs_init": 1, "epochs_finetune": 1, "batch_size": 4,
              "base_width": 4, "depth": 2, "disc_layers": 1, "disc_width": 4,
              "anneal_period": 4},
    "eval": {"figures": 1},
    "sweep": {"levels": [2, 3]},
}


def write_config(tmp_path, payload=None, **overrides):
    payload = dict(payload or TINY)
    payload.update(overrides)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(payload))
    return path


class TestConfig:
    def test_minimal_defaults(self):
        cfg = config_from_dict({"task": "procedural"})
        assert cfg.train.lr_init == 0.002
        assert cfg.train.lr_finetune == 0.0005
        assert cfg.train.adam_beta1 == 0.9
        assert cfg.train.adam_beta2 == 0.999
        assert cfg.train.batch_size == 8
        assert cfg.train.anneal_period == 1000
        assert cfg.train.weights.lambda_fidelity == 1.0
        assert cfg.train.weights.lambda_adversarial == 0.001
        assert cfg.data.keep_fraction == 0.08

    def test_unknown_keys_fatal(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            config_from_dict({"task": "procedural", "lerning_rate": 0.1})
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict({"task": "procedural", "train": {"epocs": 5}})
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict({"task": "procedural", "data": {"keepfraction": 0.1}})

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            config_from_dict({"task": "petct"})
        with pytest.raises(ConfigError):
            config_from_dict({"task": "undersample"})  # needs data.dir
        with pytest.raises(ConfigError):
            config_from_dict({"task": "procedural", "train": {"batch_size": 0}})
        with pytest.raises(ConfigError):
            config_from_dict({"task": "procedural", "schema_version": 99})

    def test_seed_propagates_to_train(self):
        cfg = config_from_dict({"task": "procedural", "seed": 17})
        assert cfg.train.seed == 17
        cfg2 = config_from_dict({"task": "procedural", "seed": 17, "train": {"seed": 4}})
        assert cfg2.train.seed == 4

    def test_hash_sensitivity(self, tmp_path):
        c1 = load_config(write_config(tmp_path))
        c2 = config_from_dict(dict(TINY))
        assert c1.config_hash() == c2.config_hash()
        c3 = config_from_dict({**TINY, "seed": 99})
        assert c3.config_hash() != c1.config_hash()

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/config.yaml")


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    """Shared tiny experiment: generated data + one trained checkpoint."""
    root = tmp_path_factory.mktemp("cliexp")
    cfg_path = write_config(root, output={"dir": str(root / "out")})
    assert main(["generate-data", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path)]) == 0
    return root, cfg_path


class TestCli:
    def test_generate_data_idempotent(self, tmp_path):
        cfg_path = write_config(tmp_path, output={"dir": str(tmp_path / "o1")})
        assert main(["generate-data", "--config", str(cfg_path)]) == 0
        manifest1 = (tmp_path / "o1" / "data" / "manifest.json").read_bytes()
        assert main(["generate-data", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "o1" / "data" / "manifest.json").read_bytes() == manifest1
        m = DatasetManifest.load(tmp_path / "o1" / "data")
        assert len(m.subjects("train")) == 3
        assert m.params["config_hash"]

    def test_train_artifacts(self, experiment):
        root, _ = experiment
        run = root / "out" / "train"
        assert (run / "log.jsonl").exists()
        assert (run / "checkpoints" / "final" / "header.json").exists()
        assert json.loads((run / "run_meta.json").read_text())["seed"] == 3

    def test_eval_report(self, experiment):
        root, cfg_path = experiment
        ckpt = root / "out" / "train" / "checkpoints" / "final"
        assert main(["eval", "--config", str(cfg_path), "--checkpoint", str(ckpt)]) == 0
        report = json.loads((root / "out" / "eval" / "report.json").read_text())
        assert len(report["per_phase"]["mean_sigma"]) == 2
        assert len(report["per_phase"]["mean_residual"]) == 2
        assert report["self_consistent"]
        assert (root / "out" / "eval" / "report.csv").exists()
        figs = list((root / "out" / "eval" / "figures").glob("*.png"))
        assert len(figs) == 1

    def test_ablation_and_compare(self, experiment):
        root, cfg_path = experiment
        assert main(["train", "--config", str(cfg_path), "--ablation", "no-guidance"]) == 0
        guided = root / "out" / "train" / "checkpoints" / "final"
        unguided = root / "out" / "train_noguidance" / "checkpoints" / "final"
        assert unguided.exists()
        assert main(["eval", "--config", str(cfg_path), "--checkpoint", str(guided),
                     "--compare", str(unguided)]) == 0
        report = json.loads((root / "out" / "eval" / "report.json").read_text())
        assert "ssim_vs_compare" in report["p_values"]
        assert 0.0 < report["p_values"]["ssim_vs_compare"] <= 1.0

    def test_resume(self, experiment, tmp_path):
        root, cfg_path = experiment
        init0 = root / "out" / "train" / "checkpoints" / "init0"
        resumed_cfg = write_config(
            tmp_path,
            dict(TINY, data={**TINY["data"], "manifest": str(root / "out" / "data")}),
            output={"dir": str(tmp_path / "resumed")},
        )
        assert main(["train", "--config", str(resumed_cfg), "--resume", str(init0)]) == 0
        assert (tmp_path / "resumed" / "train" / "checkpoints" / "final").exists()

    def test_sweep_with_failure(self, experiment):
        root, cfg_path = experiment
        assert main(["sweep-supervision", "--config", str(cfg_path),
                     "--levels", "2,3,99"]) == 0
        report = json.loads((root / "out" / "sweep" / "sweep_report.json").read_text())
        by_level = {r["level"]: r for r in report["results"]}
        assert by_level[99]["status"] == "failed"
        assert by_level[2]["status"] == "ok"
        assert by_level[3]["status"] == "ok"
        assert (root / "out" / "sweep" / "curves.png").exists()

    def test_exit_codes(self, tmp_path, experiment):
        root, cfg_path = experiment
        # config error
        assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 2
        # data error: no manifest generated in this out dir
        assert main(["train", "--config", str(cfg_path),
                     "--out", str(tmp_path / "fresh")]) == 3
        # eval arch mismatch -> config error
        bad_cfg = write_config(tmp_path, dict(TINY, train={**TINY["train"], "base_width": 8}),
                               output={"dir": str(root / "out")})
        ckpt = root / "out" / "train" / "checkpoints" / "final"
        assert main(["eval", "--config", str(bad_cfg), "--checkpoint", str(ckpt)]) == 2

    def test_seed_override_changes_hash(self, experiment):
        root, cfg_path = experiment
        assert main(["generate-data", "--config", str(cfg_path), "--seed", "55",
                     "--out", str(root / "seeded")]) == 0
        meta = json.loads((root / "seeded" / "data" / "run_meta.json").read_text())
        assert meta["seed"] == 55

    def test_module_entrypoint_help(self):
        proc = subprocess.run(
            [sys.executable, "-m", "upgan.cli", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "generate-data" in proc.stdout
        assert "sweep-supervision" in proc.stdout
