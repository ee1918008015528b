"""SGD with momentum, the step-halving schedule and the training loop."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .data import LabeledImageSet
from .errors import DimensionError, UsageError
from .memory import MemLedger
from .network import Model, model_backward, model_forward, softmax_xent

__all__ = [
    "TrainConfig",
    "SgdState",
    "RunReport",
    "lr_at_epoch",
    "sgd_momentum_step",
    "evaluate",
    "train",
    "METRIC_COLUMNS",
    "PAPER_PROTOCOL",
]

METRIC_COLUMNS = ["epoch", "phase", "loss", "accuracy", "avg_feature_bytes",
                  "peak_feature_bytes", "lr", "beta"]


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 0.02
    lr_period: int = 50
    momentum: float = 0.95
    epochs: int = 30
    beta: float = 1.0
    seed: int = 0
    dataset: str = "synthetic"
    subset: Optional[int] = None
    precision: str = "f64"

    def __post_init__(self):
        for name in ("batch_size", "lr_period", "epochs"):
            if getattr(self, name) <= 0:
                raise UsageError(f"{name} must be positive")
        if self.lr <= 0:
            raise UsageError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise UsageError("momentum must lie in [0, 1)")
        if self.beta < 0:
            raise UsageError("beta must be non-negative")
        if self.subset is not None and self.subset <= 0:
            raise UsageError("subset must be positive")
        if self.precision not in ("f32", "f64"):
            raise UsageError("precision must be f32 or f64")

    @property
    def bytes_per_scalar(self) -> int:
        return 4 if self.precision == "f32" else 8


# Full experimental protocol (desk defaults above are scaled down).
PAPER_PROTOCOL = dict(batch_size=128, lr=0.02, lr_period=50, momentum=0.95, epochs=300)


@dataclass
class SgdState:
    velocity: Dict[str, np.ndarray]
    momentum: float
    lr: float

    @classmethod
    def zeros_like(cls, params, momentum: float, lr: float) -> "SgdState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, momentum, lr)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return cfg.lr * 0.5 ** (epoch // cfg.lr_period)


def sgd_momentum_step(params, grads, state: SgdState, lr: Optional[float] = None):
    """Classical momentum: ``v <- mu v - lr g``, ``w <- w + v`` (in place)."""
    lr = state.lr if lr is None else lr
    for name, w in params.items():
        g = grads[name]
        v = state.velocity[name]
        if g.shape != w.shape or v.shape != w.shape:
            raise DimensionError(f"shape mismatch for {name}")
        v *= state.momentum
        v -= lr * g
        w += v
    state.lr = lr
    return params, state


@dataclass
class RunReport:
    rows: List[dict] = field(default_factory=list)
    ledger: Optional[MemLedger] = None
    model: Optional[Model] = None

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _fmt(row[k]) for k in METRIC_COLUMNS})
        return buf.getvalue()

    def last(self, phase: str) -> dict:
        return [r for r in self.rows if r["phase"] == phase][-1]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _check_shapes(model: Model, data: LabeledImageSet):
    if data.images.shape[1:] != model.spec.input_shape:
        raise DimensionError(
            f"dataset images {data.images.shape[1:]} do not fit model input {model.spec.input_shape}")
    if data.num_classes != model.spec.num_classes:
        raise DimensionError(
            f"dataset has {data.num_classes} classes, model outputs {model.spec.num_classes}")


def evaluate(model: Model, data: LabeledImageSet, batch_size: int = 256,
             ledger: Optional[MemLedger] = None):
    """Mean loss and accuracy over ``data``."""
    total_loss, correct = 0.0, 0
    for start in range(0, len(data), batch_size):
        xb = data.images[start:start + batch_size]
        yb = data.labels[start:start + batch_size]
        logits, _, _ = model_forward(model, xb, ledger)
        loss, _ = softmax_xent(logits, yb)
        total_loss += loss * len(yb)
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
    return total_loss / len(data), correct / len(data)


def _ledger_stats(ledger: MemLedger):
    return (ledger.average, ledger.peak) if len(ledger) else (0.0, 0)


def train(model: Model, cfg: TrainConfig, train_set: LabeledImageSet,
          test_set: Optional[LabeledImageSet] = None, log=None) -> RunReport:
    """Train ``model`` in place and return per-epoch metrics.

    The model's global beta is replaced by ``cfg.beta``. Batch order comes
    from a PCG64 generator seeded with ``cfg.seed``, so identical inputs
    give identical trajectories.
    """
    if len(train_set) == 0:
        raise UsageError("training set is empty")
    _check_shapes(model, train_set)
    if test_set is not None:
        _check_shapes(model, test_set)
    model.spec = model.spec.with_mode(beta=cfg.beta)

    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    state = SgdState.zeros_like(model.params, cfg.momentum, cfg.lr)
    run_ledger = MemLedger(bytes_per_scalar=cfg.bytes_per_scalar)
    report = RunReport(ledger=run_ledger, model=model)
    n = len(train_set)

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = shuffle_rng.permutation(n)
        ledger = MemLedger(bytes_per_scalar=cfg.bytes_per_scalar)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = train_set.images[idx], train_set.labels[idx]
            logits, caches, _ = model_forward(model, xb, ledger)
            loss, grad = softmax_xent(logits, yb)
            grads = model_backward(model, caches, grad)
            sgd_momentum_step(model.params, grads, state, lr)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        avg, peak = _ledger_stats(ledger)
        run_ledger.extend(ledger)
        report.rows.append(dict(epoch=epoch + 1, phase="train", loss=total_loss / n,
                                accuracy=correct / n, avg_feature_bytes=avg,
                                peak_feature_bytes=peak, lr=lr, beta=cfg.beta))
        if test_set is not None:
            eval_ledger = MemLedger(bytes_per_scalar=cfg.bytes_per_scalar)
            loss, acc = evaluate(model, test_set, cfg.batch_size, eval_ledger)
            avg, peak = _ledger_stats(eval_ledger)
            report.rows.append(dict(epoch=epoch + 1, phase="test", loss=loss, accuracy=acc,
                                    avg_feature_bytes=avg, peak_feature_bytes=peak,
                                    lr=lr, beta=cfg.beta))
        if log is not None:
            log(report.rows[-1] if test_set is None else report.rows[-2:])
    return report


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
