"""Command-line entry point.

Commands: ``train``, ``eval``, ``sweep-beta``, ``compare``, ``selftest``.
Settings merge as defaults < config file (``--config``) < flags.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric-integrity
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import checkpoint
from .data import LabeledImageSet, data_dir, load_cifar_bin, load_idx, synthetic_shapes
from .errors import DataError, NumericIntegrityError, UsageError
from .memory import MemLedger, relative_memory
from .network import (
    SPATIAL,
    SPECTRAL,
    Model,
    calibrate_spectral_gain,
    model_forward,
    spec_lenet_mini,
)
from .train import TrainConfig, evaluate, train
from .util import atomic_write_text

log = logging.getLogger("specnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = ("train", "eval", "sweep-beta", "compare", "selftest")
DATASETS = ("mnist", "cifar10", "synthetic")
DEFAULT_BETAS = (0.5, 0.75, 1.0, 1.25, 1.5)
SUMMARY_COLUMNS = ["beta", "avg_ratio", "peak_ratio", "final_accuracy_ratio"]
PROBE_COLUMNS = ["beta", "avg_nnz_fraction", "avg_bytes", "peak_bytes",
                 "baseline_avg_bytes", "baseline_peak_bytes"]

SYNTHETIC_TRAIN = 10000
SYNTHETIC_TEST = 2000
PROBE_BATCH = 128


@dataclass
class RunConfig:
    command: str
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: Optional[Path] = None
    out: Path = Path("runs")
    beta_list: List[float] = field(default_factory=lambda: list(DEFAULT_BETAS))
    model: Optional[Path] = None
    mode: str = SPECTRAL
    test_subset: Optional[int] = None
    gain_target: float = 1.0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _pos_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _beta_list(text):
    betas = [_nonneg_float(t) for t in str(text).replace(",", " ").split()]
    if not betas:
        raise argparse.ArgumentTypeError("beta list is empty")
    return betas


# option name -> (converter, help)
OPTIONS = {
    "dataset": (str, "mnist | cifar10 | synthetic"),
    "data-dir": (str, "dataset root (default: $SPECNET_DATA_DIR)"),
    "beta": (_nonneg_float, "spectral magnitude threshold"),
    "beta-list": (_beta_list, "comma-separated thresholds for sweep-beta"),
    "epochs": (_pos_int, "training epochs"),
    "batch": (_pos_int, "mini-batch size"),
    "lr": (float, "initial learning rate"),
    "lr-period": (_pos_int, "epochs between learning-rate halvings"),
    "momentum": (float, "SGD momentum"),
    "seed": (int, "random seed"),
    "out": (str, "output directory"),
    "model": (str, "checkpoint to load"),
    "mode": (str, "spectral | spatial"),
    "precision": (str, "f32 | f64 (bytes per scalar in memory accounting)"),
    "subset": (_pos_int, "number of training samples"),
    "test-subset": (_pos_int, "number of test samples"),
    "gain-target": (_nonneg_float, "spectral gain calibration level"),
}

DEFAULTS = {
    "dataset": "synthetic", "data-dir": None, "beta": 1.0, "beta-list": list(DEFAULT_BETAS),
    "epochs": 30, "batch": 32, "lr": 0.02, "lr-period": 50, "momentum": 0.95, "seed": 0,
    "out": "runs", "model": None, "mode": SPECTRAL, "precision": "f64", "subset": None,
    "test-subset": None, "gain-target": 1.0,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="specnet", description="Spectral-domain CNN blocks with sparse feature maps.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value settings file")
    for name, (conv, help_text) in OPTIONS.items():
        p.add_argument(f"--{name}", type=conv, default=argparse.SUPPRESS, help=help_text)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = OPTIONS[key][0](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def parse_args(argv) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    merged = dict(DEFAULTS)
    if ns.get("config"):
        merged.update(read_config(ns["config"]))
    merged.update({k.replace("_", "-"): v for k, v in ns.items()
                   if k.replace("_", "-") in OPTIONS})
    if merged["dataset"] not in DATASETS:
        raise UsageError(f"--dataset must be one of {DATASETS}")
    if merged["mode"] not in (SPECTRAL, SPATIAL):
        raise UsageError("--mode must be spectral or spatial")
    if not merged["beta-list"]:
        raise UsageError("beta list is empty")
    tc = TrainConfig(batch_size=merged["batch"], lr=merged["lr"], lr_period=merged["lr-period"],
                     momentum=merged["momentum"], epochs=merged["epochs"], beta=merged["beta"],
                     seed=merged["seed"], dataset=merged["dataset"], subset=merged["subset"],
                     precision=merged["precision"])
    return RunConfig(
        command=ns["command"], train=tc,
        data_dir=data_dir(merged["data-dir"]),
        out=Path(merged["out"]),
        beta_list=sorted(merged["beta-list"]),
        model=Path(merged["model"]) if merged["model"] else None,
        mode=merged["mode"], test_subset=merged["test-subset"],
        gain_target=merged["gain-target"],
    )


# -- data -----------------------------------------------------------------


class DataMissing(DataError):
    pass


def _first_existing(root: Path, names):
    for name in names:
        for base in (root, root / "mnist", root / "MNIST" / "raw", root / "cifar-10-batches-bin"):
            if (base / name).exists():
                return base / name
    return None


def load_dataset(cfg: RunConfig):
    """Returns ``(train_set, test_set)``."""
    tc = cfg.train
    if tc.dataset == "synthetic":
        train_set = synthetic_shapes(tc.subset or SYNTHETIC_TRAIN, seed=tc.seed)
        test_set = synthetic_shapes(cfg.test_subset or SYNTHETIC_TEST, seed=tc.seed + 1,
                                    stats=train_set.stats)
        return train_set, test_set
    root = cfg.data_dir
    if root is None or not root.is_dir():
        raise DataMissing(f"dataset {tc.dataset!r} needs --data-dir or SPECNET_DATA_DIR")
    if tc.dataset == "mnist":
        paths = [_first_existing(root, [stem, stem.replace("-idx", ".idx")]) for stem in (
            "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
            "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")]
        if any(p is None for p in paths):
            raise DataMissing(f"MNIST IDX files not found under {root}")
        train_set = load_idx(paths[0], paths[1], limit=tc.subset)
        test_set = load_idx(paths[2], paths[3], stats=train_set.stats, limit=cfg.test_subset)
        return train_set, test_set
    batches = [_first_existing(root, [f"data_batch_{i}.bin"]) for i in range(1, 6)]
    batches = [b for b in batches if b is not None]
    test_path = _first_existing(root, ["test_batch.bin"])
    if not batches or test_path is None:
        raise DataMissing(f"CIFAR-10 binary batches not found under {root}")
    parts = [load_cifar_bin(b, stats=(np.zeros(3), np.ones(3))) for b in batches]
    raw = np.concatenate([p.images for p in parts])[:tc.subset]
    labels = np.concatenate([p.labels for p in parts])[:tc.subset]
    mean = raw.mean(axis=(0, 2, 3))
    std = raw.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    train_set = LabeledImageSet((raw - mean[None, :, None, None]) / std[None, :, None, None],
                                labels, 10, mean, std)
    test_set = load_cifar_bin(test_path, stats=(mean, std), limit=cfg.test_subset)
    return train_set, test_set


# -- commands -------------------------------------------------------------


def initial_model(cfg: RunConfig, train_set: LabeledImageSet, mode: str) -> Model:
    """Seeded Glorot init followed by spectral gain calibration.

    Calibration uses the first mini-batch of the training set so every
    mode and every beta starts from identical weights.
    """
    spec = spec_lenet_mini(train_set.images.shape[1:], train_set.num_classes,
                           cfg.train.beta, mode)
    init_seed = np.random.SeedSequence(cfg.train.seed).spawn(2)[0]
    model = Model.init(spec, rng=np.random.default_rng(init_seed))
    if cfg.gain_target > 0:
        calibrate_spectral_gain(model, train_set.images[:cfg.train.batch_size],
                                target=cfg.gain_target)
    return model


def _meta(cfg: RunConfig, train_set: LabeledImageSet) -> dict:
    tc = cfg.train
    return {"mean": train_set.mean.tolist(), "std": train_set.std.tolist(),
            "config": {f.name: getattr(tc, f.name) for f in fields(tc)},
            "gain_target": cfg.gain_target}


def _run_training(cfg, train_set, test_set, mode, beta, tag):
    from dataclasses import replace
    tc = replace(cfg.train, beta=beta)
    model = initial_model(cfg, train_set, mode)
    log.info("training %s (beta=%g) on %d samples", mode, beta, len(train_set))
    report = train(model, tc, train_set, test_set,
                   log=lambda rows: log.info("%s", rows))
    out = cfg.out
    atomic_write_text(out / f"metrics{tag}.csv", report.metrics_csv())
    atomic_write_text(out / f"ledger{tag}.csv", report.ledger.to_csv())
    checkpoint.save(out / f"model{tag}.spnt", model, _meta(cfg, train_set))
    return model, report


def cmd_train(cfg: RunConfig) -> int:
    train_set, test_set = load_dataset(cfg)
    beta = cfg.train.beta if cfg.mode == SPECTRAL else 0.0
    _, report = _run_training(cfg, train_set, test_set, cfg.mode, beta, "")
    row = report.last("test")
    print(f"{cfg.mode} beta={beta:g}: test accuracy {row['accuracy']:.4f}, "
          f"avg feature bytes {report.ledger.average:.1f}, peak {report.ledger.peak}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    if cfg.model is None:
        raise UsageError("eval needs --model CHECKPOINT")
    try:
        model, meta = checkpoint.load(cfg.model)
    except OSError as exc:
        raise DataMissing(f"cannot read checkpoint: {exc}") from None
    train_set, test_set = load_dataset(cfg)
    if "mean" in meta:
        stats = (np.array(meta["mean"]), np.array(meta["std"]))
        if cfg.train.dataset == "synthetic":
            test_set = synthetic_shapes(len(test_set), seed=cfg.train.seed + 1, stats=stats)
    model = model.with_mode(cfg.mode, cfg.train.beta if cfg.mode == SPECTRAL else 0.0)
    ledger = MemLedger(bytes_per_scalar=cfg.train.bytes_per_scalar)
    loss, acc = evaluate(model, test_set, cfg.train.batch_size, ledger)
    row = dict(epoch=0, phase="eval", loss=loss, accuracy=acc,
               avg_feature_bytes=ledger.average, peak_feature_bytes=ledger.peak,
               lr=0.0, beta=model.spec.beta)
    from .train import RunReport
    atomic_write_text(cfg.out / "eval.csv", RunReport(rows=[row]).metrics_csv())
    print(f"eval {cfg.mode} beta={model.spec.beta:g}: loss {loss:.4f}, accuracy {acc:.4f}")
    return EXIT_OK


def probe_memory(model: Model, probe, beta: float, bytes_per_scalar: int = 8):
    """Spectral vs baseline storage for ``probe`` under fixed weights."""
    spec_ledger = MemLedger(bytes_per_scalar=bytes_per_scalar)
    base_ledger = MemLedger(bytes_per_scalar=bytes_per_scalar)
    model_forward(model.with_mode(SPECTRAL, beta), probe, spec_ledger)
    model_forward(model.with_mode(SPATIAL, 0.0), probe, base_ledger)
    from .network import block_magnitudes
    mags = block_magnitudes(model.with_mode(SPECTRAL, beta), probe)
    # fraction of entries each block keeps, averaged over blocks
    nnz = float(np.mean([np.mean(m > b) for _, b, m in mags]))
    return spec_ledger, base_ledger, nnz


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(row[c])) for c in columns])
    return buf.getvalue()


def cmd_sweep(cfg: RunConfig) -> int:
    train_set, test_set = load_dataset(cfg)
    _, base_report = _run_training(cfg, train_set, test_set, SPATIAL, 0.0, "_baseline")
    base_acc = base_report.last("test")["accuracy"]
    trained = {}
    for beta in cfg.beta_list:
        model, report = _run_training(cfg, train_set, test_set, SPECTRAL, beta, f"_beta{beta:g}")
        trained[beta] = (model, report)
    reference_beta = cfg.train.beta if cfg.train.beta in trained else cfg.beta_list[len(cfg.beta_list) // 2]
    reference = trained[reference_beta][0]
    probe = test_set.images[:PROBE_BATCH]
    summary, probes = [], []
    for beta in cfg.beta_list:
        spec_l, base_l, nnz = probe_memory(reference, probe, beta, cfg.train.bytes_per_scalar)
        avg_ratio, peak_ratio = relative_memory(spec_l, base_l)
        acc = trained[beta][1].last("test")["accuracy"]
        summary.append(dict(beta=beta, avg_ratio=avg_ratio, peak_ratio=peak_ratio,
                            final_accuracy_ratio=acc / base_acc if base_acc else 0.0))
        probes.append(dict(beta=beta, avg_nnz_fraction=nnz, avg_bytes=spec_l.average,
                           peak_bytes=spec_l.peak, baseline_avg_bytes=base_l.average,
                           baseline_peak_bytes=base_l.peak))
        print(f"beta={beta:g}: avg_ratio {avg_ratio:.4f} peak_ratio {peak_ratio:.4f} "
              f"accuracy_ratio {summary[-1]['final_accuracy_ratio']:.4f}")
    atomic_write_text(cfg.out / "sweep_summary.csv", _csv(SUMMARY_COLUMNS, summary))
    atomic_write_text(cfg.out / "sweep_probe.csv", _csv(PROBE_COLUMNS, probes))
    atomic_write_text(cfg.out / "sweep_reference.json",
                      json.dumps({"reference_beta": reference_beta,
                                  "probe_samples": int(len(probe))}, indent=2))
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    train_set, test_set = load_dataset(cfg)
    if cfg.model is not None:
        model, _ = checkpoint.load(cfg.model)
    else:
        model = initial_model(cfg, train_set, SPECTRAL)
    beta = cfg.train.beta
    spec_model = model.with_mode(SPECTRAL, beta)
    base_model = model.with_mode(SPATIAL, 0.0)
    worst, agree = 0.0, 0
    for start in range(0, len(test_set), 256):
        xb = test_set.images[start:start + 256]
        a = model_forward(spec_model, xb)[0]
        b = model_forward(base_model, xb)[0]
        worst = max(worst, float(np.max(np.abs(a - b))))
        agree += int(np.sum(np.argmax(a, 1) == np.argmax(b, 1)))
    _, spec_acc = evaluate(spec_model, test_set)
    _, base_acc = evaluate(base_model, test_set)
    row = dict(beta=beta, max_logit_deviation=worst, spectral_accuracy=spec_acc,
               spatial_accuracy=base_acc, prediction_agreement=agree / len(test_set))
    atomic_write_text(cfg.out / "compare.csv", _csv(list(row), [row]))
    print(f"beta={beta:g}: max logit deviation {worst:.3e}; accuracy spectral {spec_acc:.4f} "
          f"vs spatial {base_acc:.4f}; prediction agreement {row['prediction_agreement']:.4f}")
    if beta == 0 and worst > 1e-6:
        raise NumericIntegrityError(f"cross-mode deviation {worst:.3e} exceeds 1e-6 at beta=0")
    return EXIT_OK


def cmd_selftest(cfg: RunConfig) -> int:
    from .selftest import run_all
    results = run_all(seed=cfg.train.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "sweep-beta": cmd_sweep,
            "compare": cmd_compare, "selftest": cmd_selftest}


def run(cfg: RunConfig) -> int:
    return HANDLERS[cfg.command](cfg)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv
                        else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_args(argv)
        return run(cfg)
    except UsageError as exc:
        print(f"specnet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"specnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericIntegrityError as exc:
        print(f"specnet: numeric integrity failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
