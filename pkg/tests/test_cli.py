import csv
import subprocess
import sys

import numpy as np
import pytest

from conftest import write_idx
from specnet import cli
from specnet.errors import UsageError
from specnet.util import atomic_write_text

SMALL = ["--subset", "96", "--test-subset", "40", "--epochs", "2"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestParse:
    def test_train_example(self):
        cfg = cli.parse_args(["train", "--dataset", "synthetic", "--beta", "1.0", "--epochs", "5"])
        assert cfg.command == "train" and cfg.train.beta == 1.0 and cfg.train.epochs == 5

    def test_negative_beta(self):
        with pytest.raises(UsageError):
            cli.parse_args(["train", "--beta", "-1"])

    def test_default_beta_list(self):
        assert cli.parse_args(["sweep-beta"]).beta_list == [0.5, 0.75, 1.0, 1.25, 1.5]

    def test_beta_list_flag(self):
        assert cli.parse_args(["sweep-beta", "--beta-list", "1.5,0.5"]).beta_list == [0.5, 1.5]

    def test_unknown_flag(self):
        with pytest.raises(UsageError):
            cli.parse_args(["train", "--learning-rate", "0.1"])

    def test_unknown_command(self):
        with pytest.raises(UsageError):
            cli.parse_args(["fit"])

    def test_bad_dataset(self):
        with pytest.raises(UsageError):
            cli.parse_args(["train", "--dataset", "imagenet"])

    def test_precedence(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("# comment\nepochs = 7\nlr = 0.05  # inline\nbatch_size = 8\n"
                        .replace("batch_size", "batch"))
        cfg = cli.parse_args(["train", "--config", str(conf), "--epochs", "3"])
        assert cfg.train.epochs == 3 and cfg.train.lr == 0.05 and cfg.train.batch_size == 8
        assert cfg.train.momentum == 0.95

    def test_unknown_config_key(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("colour = blue\n")
        with pytest.raises(UsageError):
            cli.parse_args(["train", "--config", str(conf)])

    def test_unreadable_config(self, tmp_path):
        with pytest.raises(UsageError):
            cli.parse_args(["train", "--config", str(tmp_path / "missing.conf")])

    def test_data_dir_from_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv("SPECNET_DATA_DIR", str(tmp_path))
        assert cli.parse_args(["train"]).data_dir == tmp_path


class TestExitCodes:
    def test_usage(self, capsys):
        assert cli.main(["train", "--beta", "-1"]) == 2
        assert "usage error" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SPECNET_DATA_DIR", raising=False)
        assert cli.main(["train", "--dataset", "mnist", "--out", str(tmp_path)]) == 3
        assert cli.main(["train", "--dataset", "cifar10", "--data-dir", str(tmp_path)]) == 3

    def test_numeric_integrity(self, tmp_path, monkeypatch):
        import specnet.network as network
        monkeypatch.setattr(network, "check_hermitian", lambda X, tol: False)
        args = ["compare", "--beta", "0", "--subset", "32", "--test-subset", "8",
                "--out", str(tmp_path)]
        assert cli.main(args) == 4

    def test_selftest(self, capsys):
        assert cli.main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 5 and "FAIL" not in out

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "specnet", "train", "--epochs", "0"],
                              capture_output=True, text=True)
        assert proc.returncode == 2


class TestCommands:
    def test_train_then_eval(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert cli.main(["train", "--beta", "0.5", "--out", str(out)] + SMALL) == 0
        rows = read_csv(out / "metrics.csv")
        assert [r["phase"] for r in rows] == ["train", "test"] * 2
        assert read_csv(out / "ledger.csv")[0].keys() == {"step", "layer", "mode", "bytes"}
        assert cli.main(["eval", "--model", str(out / "model.spnt"), "--beta", "0.5",
                         "--out", str(out)] + SMALL) == 0
        evaluated = read_csv(out / "eval.csv")[0]
        assert float(evaluated["accuracy"]) == pytest.approx(float(rows[-1]["accuracy"]))

    def test_eval_needs_model(self, tmp_path):
        assert cli.main(["eval", "--out", str(tmp_path)]) == 2

    def test_compare_zero_beta(self, tmp_path):
        assert cli.main(["compare", "--beta", "0", "--out", str(tmp_path)] + SMALL) == 0
        row = read_csv(tmp_path / "compare.csv")[0]
        assert float(row["max_logit_deviation"]) <= 1e-6
        assert float(row["prediction_agreement"]) == 1.0

    def test_sweep_summary(self, tmp_path):
        args = ["sweep-beta", "--beta-list", "0.5,1.0,1.5", "--out", str(tmp_path)] + SMALL
        assert cli.main(args) == 0
        rows = read_csv(tmp_path / "sweep_summary.csv")
        assert list(rows[0]) == ["beta", "avg_ratio", "peak_ratio", "final_accuracy_ratio"]
        avg = [float(r["avg_ratio"]) for r in rows]
        assert [float(r["beta"]) for r in rows] == [0.5, 1.0, 1.5]
        assert avg == sorted(avg, reverse=True)
        nnz = [float(r["avg_nnz_fraction"]) for r in read_csv(tmp_path / "sweep_probe.csv")]
        assert nnz == sorted(nnz, reverse=True)

    def test_mnist_files_are_found(self, tmp_path):
        rng = np.random.default_rng(0)
        for prefix, n in (("train", 40), ("t10k", 10)):
            write_idx(tmp_path / f"{prefix}-images-idx3-ubyte", 0x803,
                      rng.integers(0, 256, (n, 12, 12)))
            write_idx(tmp_path / f"{prefix}-labels-idx1-ubyte", 0x801, np.arange(n) % 10)
        cfg = cli.parse_args(["train", "--dataset", "mnist", "--data-dir", str(tmp_path)])
        train_set, test_set = cli.load_dataset(cfg)
        assert len(train_set) == 40 and len(test_set) == 10
        np.testing.assert_array_equal(test_set.mean, train_set.mean)


def test_atomic_write_keeps_old_file_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "metrics.csv"
    atomic_write_text(target, "old\n")
    import os

    def boom(*args):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write_text(target, "new\n")
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["metrics.csv"]
