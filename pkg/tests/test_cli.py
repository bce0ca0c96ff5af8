"""End-to-end command tests driven through ``main()`` plus one subprocess
check of the module entry point."""

import hashlib
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from ptanet.cli import (
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    load_config_file,
    main,
)

FROZEN_HHH = {"params": 2_226_434, "macs": 104_172_034}


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def stdout_json(out: str):
    return json.loads(out)


def effective_config(err: str) -> dict:
    for line in err.splitlines():
        if line.startswith("effective-config "):
            return json.loads(line.split(" ", 1)[1])
    raise AssertionError("no effective-config line printed")


def dir_digest(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(
                path.read_bytes()
            ).hexdigest()
    return out


class TestCount:
    def test_all_configs_table(self, capsys):
        code, out, err = run_cli(capsys, "count", "--all")
        assert code == EXIT_OK
        doc = stdout_json(out)
        names = [row["config"] for row in doc["configs"]]
        assert names == ["HHH", "LHH", "HLH", "HHL", "LLL", "BBB"]
        hhh = doc["configs"][0]
        assert hhh["params"] == FROZEN_HHH["params"]
        assert hhh["macs"] == FROZEN_HHH["macs"]
        assert hhh["relative_macs"] == 1.0
        assert "config" in err  # human table on stderr
        assert effective_config(err)["command"] == "count"

    def test_single_config(self, capsys):
        code, out, _ = run_cli(capsys, "count", "--pta-config", "LLL")
        assert code == EXIT_OK
        doc = stdout_json(out)
        assert [row["config"] for row in doc["configs"]] == ["LLL"]

    def test_bad_config_string(self, capsys):
        code, _, err = run_cli(capsys, "count", "--pta-config", "XYZ")
        assert code == EXIT_USAGE
        assert "error" in err

    def test_out_file_copy(self, capsys, tmp_path):
        out_file = tmp_path / "counts.json"
        code, out, _ = run_cli(capsys, "count", "--all", "--out", str(out_file))
        assert code == EXIT_OK
        assert json.loads(out_file.read_text()) == stdout_json(out)


class TestGen:
    def test_writes_layout(self, capsys, tmp_path):
        root = tmp_path / "data"
        code, out, _ = run_cli(
            capsys, "gen", str(root), "--live", "3", "--spoof", "2", "--seed", "1"
        )
        assert code == EXIT_OK
        assert stdout_json(out)["files"] == 5
        assert len(list((root / "live").glob("*.ppm"))) == 3
        assert len(list((root / "spoof").glob("*.ppm"))) == 2

    def test_rerun_byte_identical(self, capsys, tmp_path):
        digests = []
        for name in ("a", "b"):
            root = tmp_path / name
            code, _, _ = run_cli(
                capsys, "gen", str(root), "--live", "2", "--spoof", "2", "--seed", "7"
            )
            assert code == EXIT_OK
            digests.append(dir_digest(root))
        assert digests[0] == digests[1]

    def test_negative_count_rejected(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "gen", str(tmp_path / "x"), "--live", "-5")
        assert code == EXIT_USAGE


class TestTrain:
    def train(self, capsys, out_dir, *extra):
        return run_cli(
            capsys, "train", "--synthetic", "4", "--epochs", "1", "--batch", "4",
            "--seed", "3", "--out", str(out_dir), *extra,
        )

    def test_produces_artifacts(self, capsys, tmp_path):
        code, out, err = self.train(capsys, tmp_path / "run")
        assert code == EXIT_OK
        doc = stdout_json(out)
        assert len(doc["epochs"]) == 1
        assert doc["best_epoch"] == 0
        run = tmp_path / "run"
        assert (run / "model.ptaw").exists()
        assert (run / "model.optim").exists()
        assert json.loads((run / "report.json").read_text()) == doc
        eff = effective_config(err)
        assert eff["command"] == "train"
        assert eff["epochs"] == 1
        assert "epoch 0:" in err  # progress line

    def test_deterministic_reports_and_weights(self, capsys, tmp_path):
        docs = []
        blobs = []
        for name in ("a", "b"):
            run = tmp_path / name
            code, out, _ = self.train(capsys, run)
            assert code == EXIT_OK
            doc = stdout_json(out)
            doc.pop("timing")
            doc.pop("best_weights")
            docs.append(doc)
            blobs.append((run / "model.ptaw").read_bytes())
        assert docs[0] == docs[1]
        assert blobs[0] == blobs[1]

    def test_epochs_zero_usage_error(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "train", "--synthetic", "4", "--epochs", "0",
            "--out", str(tmp_path),
        )
        assert code == EXIT_USAGE
        assert "epochs" in err

    def test_requires_exactly_one_source(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "train", "--epochs", "1")
        assert code == EXIT_USAGE
        code, _, _ = run_cli(
            capsys, "train", "--epochs", "1", "--synthetic", "4",
            "--data", str(tmp_path),
        )
        assert code == EXIT_USAGE

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure_exit_code(self, capsys, tmp_path):
        code, _, err = self.train(capsys, tmp_path / "nan", "--lr", "1e30")
        assert code == EXIT_NUMERIC
        assert "non-finite" in err


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    code = main(
        ["train", "--synthetic", "4", "--epochs", "1", "--batch", "4",
         "--seed", "3", "--out", str(out)]
    )
    assert code == EXIT_OK
    return out / "model.ptaw"


class TestEval:
    def test_reports_metrics(self, capsys, model_path):
        capsys.readouterr()
        code, out, _ = run_cli(
            capsys, "eval", str(model_path), "--synthetic", "4",
            "--pta-config", "LLL",
        )
        assert code == EXIT_OK
        doc = stdout_json(out)
        assert {"accuracy", "apcer", "bpcer", "acer"} <= set(doc)

    def test_many_configs_one_model(self, capsys, model_path):
        capsys.readouterr()
        for cfg in ("HHH", "LLL", "BBB"):
            code, out, _ = run_cli(
                capsys, "eval", str(model_path), "--synthetic", "2",
                "--pta-config", cfg,
            )
            assert code == EXIT_OK

    def test_malformed_config_string(self, capsys, model_path):
        capsys.readouterr()
        code, _, _ = run_cli(
            capsys, "eval", str(model_path), "--synthetic", "2",
            "--pta-config", "HQX",
        )
        assert code == EXIT_USAGE

    def test_truncated_weights_integrity_error(self, capsys, model_path, tmp_path):
        capsys.readouterr()
        clipped = tmp_path / "clipped.ptaw"
        clipped.write_bytes(model_path.read_bytes()[:300])
        code, _, err = run_cli(
            capsys, "eval", str(clipped), "--synthetic", "2"
        )
        assert code == EXIT_DATA
        assert "truncated" in err

    def test_missing_data_directory(self, capsys, model_path):
        capsys.readouterr()
        code, _, _ = run_cli(
            capsys, "eval", str(model_path), "--data", "/nonexistent/path"
        )
        assert code == EXIT_DATA


class TestBench:
    def test_too_few_runs_rejected(self, capsys):
        code, _, err = run_cli(capsys, "bench", "--runs", "10")
        assert code == EXIT_USAGE
        assert "30" in err

    def test_single_config_report(self, capsys):
        code, out, _ = run_cli(
            capsys, "bench", "--pta-config", "LLL", "--runs", "30",
            "--warmup", "0",
        )
        assert code == EXIT_OK
        doc = stdout_json(out)
        row = doc["configs"][0]
        assert row["config"] == "LLL"
        assert row["timed_runs"] == 30
        assert row["p10_ms"] <= row["median_ms"] <= row["p90_ms"]
        assert row["relative_to_HHH"] > 0


class TestConfigFile:
    def test_parse_flat_and_sampler(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# comment\n"
            "seed=9\n"
            "epochs = 2\n"
            "lr=5e-4\n"
            "[sampler]\n"
            "HHH=0.75\n"
            "LLL=0.25\n"
        )
        flat, sampler = load_config_file(str(cfg))
        assert flat == {"seed": 9, "epochs": 2, "lr": 5e-4}
        assert sampler == {"HHH": 0.75, "LLL": 0.25}

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("learning_rate=1\n")
        code, _, err = run_cli(
            capsys, "train", "--config", str(cfg), "--synthetic", "4",
        )
        assert code == EXIT_USAGE
        assert "unknown key" in err

    def test_file_values_used_and_flags_override(self, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "seed=3\nepochs=1\nbatch=4\nsynthetic=4\n"
            f"out={tmp_path / 'from_file'}\n"
            "[sampler]\nHHH=1.0\n"
        )
        code, out, _ = run_cli(capsys, "train", "--config", str(cfg))
        assert code == EXIT_OK
        doc = stdout_json(out)
        assert doc["train_config"]["seed"] == 3
        assert doc["sampler"]["probabilities"] == {"HHH": 1.0}
        assert (tmp_path / "from_file" / "model.ptaw").exists()

        code, out, _ = run_cli(
            capsys, "train", "--config", str(cfg), "--seed", "8",
            "--out", str(tmp_path / "flagged"),
        )
        assert code == EXIT_OK
        assert stdout_json(out)["train_config"]["seed"] == 8

    def test_bad_sampler_probabilities(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("synthetic=4\nepochs=1\n[sampler]\nHHH=0.5\nLLL=0.4\n")
        code, _, err = run_cli(capsys, "train", "--config", str(cfg))
        assert code == EXIT_USAGE
        assert "sampler" in err

    def test_missing_file(self, capsys):
        code, _, _ = run_cli(
            capsys, "train", "--config", "/nonexistent.cfg", "--synthetic", "4"
        )
        assert code == EXIT_DATA


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "ptanet.cli", "count", "--pta-config", "HHH"],
            capture_output=True, text=True, timeout=120,
        )
        assert result.returncode == 0
        doc = json.loads(result.stdout)
        assert doc["configs"][0]["macs"] == FROZEN_HHH["macs"]

    @pytest.mark.skipif(shutil.which("ptanet") is None, reason="script not installed")
    def test_console_script(self):
        result = subprocess.run(
            ["ptanet", "count", "--pta-config", "LLL"],
            capture_output=True, text=True, timeout=120,
        )
        assert result.returncode == 0
        assert json.loads(result.stdout)["configs"][0]["config"] == "LLL"
