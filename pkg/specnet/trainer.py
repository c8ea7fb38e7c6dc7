"""
SpecNet - Trainer
SGD with classical momentum, step-halving learning rate, and the train/eval loop with metric logging
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .artifacts import save_json, write_csv
from .checkpoint import save_checkpoint
from .datasets import LabeledImageSet
from .errors import NumericIntegrityError, ShapeError, UsageError
from .memory_profiler import BYTES_PER_SCALAR, MemLedger, write_ledger_csv
from .network import MODES, SpecNetModel, model_backward, model_forward, softmax_xent
from .spectral_block import get_activation

logger = logging.getLogger("SpecTrainer")

METRICS_HEADER = ("epoch", "phase", "loss", "accuracy", "avg_feature_bytes", "peak_feature_bytes", "lr", "beta")


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
    subset: int = 10000
    mode: str = "spectral"
    activation: str = "tanh"
    precision: str = "f64"

    def validate(self) -> "TrainConfig":
        for name in ("batch_size", "lr_period", "epochs", "subset"):
            if int(getattr(self, name)) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr > 0:
            raise UsageError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise UsageError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise UsageError(f"beta must be a finite value >= 0, got {self.beta}")
        if self.seed < 0:
            raise UsageError(f"seed must be >= 0, got {self.seed}")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.precision not in BYTES_PER_SCALAR:
            raise UsageError(f"precision must be one of {sorted(BYTES_PER_SCALAR)}, got '{self.precision}'")
        get_activation(self.activation)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SgdState:
    velocity: Dict[str, np.ndarray]
    momentum: float
    lr: float = 0.0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray], momentum: float) -> "SgdState":
        return cls({name: np.zeros_like(value) for name, value in params.items()}, momentum)


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """initial_lr * 0.5^floor(epoch / period), epochs counted from 0"""
    if epoch < 0:
        raise UsageError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr * 0.5 ** (epoch // cfg.lr_period)


def sgd_momentum_step(
    params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: SgdState, lr: float
) -> Tuple[Dict[str, np.ndarray], SgdState]:
    """v <- mu*v - lr*g; w <- w + v"""
    if set(params) != set(grads) or set(params) != set(state.velocity):
        raise ShapeError(f"parameter, gradient and velocity names differ: {sorted(params)} / {sorted(grads)}")
    updated = {}
    for name, w in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        v = state.velocity[name]
        if g.shape != np.shape(w) or v.shape != np.shape(w):
            raise ShapeError(f"{name}: parameter {np.shape(w)}, gradient {g.shape}, velocity {v.shape}")
        v = state.momentum * v - lr * g
        state.velocity[name] = v
        updated[name] = w + v
    state.lr = lr
    return updated, state


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    accuracy: float
    avg_feature_bytes: float
    peak_feature_bytes: int
    lr: float
    beta: float

    def to_row(self) -> Tuple[Any, ...]:
        return (self.epoch, self.phase, self.loss, self.accuracy, self.avg_feature_bytes,
                self.peak_feature_bytes, self.lr, self.beta)


@dataclass
class RunReport:
    config: Dict[str, Any]
    records: List[EpochRecord] = field(default_factory=list)
    ledger: MemLedger = field(default_factory=MemLedger)
    checkpoint: Optional[str] = None
    epoch_seconds: List[float] = field(default_factory=list)   # wall time, kept out of metrics.csv

    def rows(self, phase: str) -> List[EpochRecord]:
        return [r for r in self.records if r.phase == phase]

    @property
    def final_train_accuracy(self) -> Optional[float]:
        rows = self.rows("train")
        return rows[-1].accuracy if rows else None

    @property
    def final_eval_accuracy(self) -> Optional[float]:
        rows = self.rows("eval")
        return rows[-1].accuracy if rows else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "epochs": len(self.rows("train")),
            "final_train_accuracy": self.final_train_accuracy,
            "final_eval_accuracy": self.final_eval_accuracy,
            "memory": self.ledger.summary(),
            "seconds": {"per_epoch": list(self.epoch_seconds), "total": float(sum(self.epoch_seconds))},
            "checkpoint": self.checkpoint,
            "records": [asdict(r) for r in self.records],
        }


def _check_compatible(model: SpecNetModel, dataset: LabeledImageSet):
    if dataset.sample_shape != model.spec.input_shape:
        raise ShapeError(f"dataset samples are {dataset.sample_shape}, model expects {model.spec.input_shape}")
    if dataset.num_classes != model.spec.num_classes:
        raise ShapeError(f"dataset has {dataset.num_classes} classes, model outputs {model.spec.num_classes}")
    if not len(dataset):
        raise UsageError("dataset is empty")


def _batch_loss(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, int, np.ndarray]:
    """(summed loss, correct count, per-sample logit gradients)"""
    total = 0.0
    grads = np.zeros_like(logits)
    for i, (row, label) in enumerate(zip(logits, labels)):
        loss, grads[i] = softmax_xent(row, int(label))
        total += loss
    correct = int(np.sum(np.argmax(logits, axis=1) == labels))
    return total, correct, grads


def evaluate(
    model: SpecNetModel, dataset: LabeledImageSet, batch_size: int = 32, precision: str = "f64"
) -> Tuple[float, float, MemLedger]:
    """(mean loss, accuracy, ledger) over the dataset in file order"""
    _check_compatible(model, dataset)
    ledger = MemLedger()
    total_loss, correct = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        images = dataset.images[start:start + batch_size]
        labels = dataset.labels[start:start + batch_size]
        logits, _, _ = model_forward(model, images, ledger, precision)
        loss, hits, _ = _batch_loss(logits, labels)
        total_loss += loss
        correct += hits
    return total_loss / len(dataset), correct / len(dataset), ledger


class SpecTrainer:
    """
    Minibatch training loop.
    Shuffling derives from a PCG64 generator seeded with cfg.seed, so identical
    (config, seed, dataset) reproduce the same parameter trajectory.
    """

    def __init__(self, model: SpecNetModel, cfg: TrainConfig, out_dir: Optional[Union[str, Path]] = None):
        self.model = model
        self.cfg = cfg.validate()
        self.out_dir = Path(out_dir) if out_dir else None
        self.state = SgdState.zeros_like(model.params, cfg.momentum)
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))

    def train_step(self, images: np.ndarray, labels: np.ndarray, lr: float, ledger: MemLedger) -> Tuple[float, int]:
        logits, caches, _ = model_forward(self.model, images, ledger, self.cfg.precision)
        loss, correct, grad_logits = _batch_loss(logits, labels)
        if not np.isfinite(loss):
            raise NumericIntegrityError(f"training loss became {loss}")
        grads = model_backward(self.model, caches, grad_logits / len(labels))
        self.model.params, self.state = sgd_momentum_step(self.model.params, grads, self.state, lr)
        return loss, correct

    def train_epoch(self, epoch: int, dataset: LabeledImageSet) -> Tuple[EpochRecord, MemLedger]:
        lr = lr_at_epoch(self.cfg, epoch)
        order = self.rng.permutation(len(dataset))
        ledger = MemLedger()
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), self.cfg.batch_size):
            idx = order[start:start + self.cfg.batch_size]
            loss, hits = self.train_step(dataset.images[idx], dataset.labels[idx], lr, ledger)
            total_loss += loss
            correct += hits
            logger.debug(f"epoch {epoch + 1} batch {start // self.cfg.batch_size}: loss {loss / len(idx):.4f}")
        record = EpochRecord(epoch + 1, "train", total_loss / len(dataset), correct / len(dataset),
                             ledger.average_bytes, ledger.peak_bytes, lr, self.model.spec.beta)
        return record, ledger

    def train(self, dataset: LabeledImageSet, held_out: Optional[LabeledImageSet] = None) -> RunReport:
        _check_compatible(self.model, dataset)
        if held_out is not None:
            _check_compatible(self.model, held_out)
        report = RunReport(config=self.cfg.to_dict())
        logger.info(f"Training {self.model.mode} model (beta={self.model.spec.beta}) on {len(dataset)} samples "
                    f"for {self.cfg.epochs} epochs")
        for epoch in range(self.cfg.epochs):
            started = time.perf_counter()
            record, ledger = self.train_epoch(epoch, dataset)
            report.epoch_seconds.append(time.perf_counter() - started)
            report.records.append(record)
            report.ledger.extend(ledger)
            message = (f"Epoch {record.epoch}/{self.cfg.epochs}: loss {record.loss:.4f}, acc {record.accuracy:.3f} "
                       f"({report.epoch_seconds[-1]:.1f}s)")
            if held_out is not None and len(held_out):
                loss, acc, ledger = evaluate(self.model, held_out, self.cfg.batch_size, self.cfg.precision)
                report.records.append(EpochRecord(record.epoch, "eval", loss, acc, ledger.average_bytes,
                                                  ledger.peak_bytes, record.lr, record.beta))
                message += f", eval acc {acc:.3f}"
            logger.info(message)
            if self.out_dir:
                write_csv(self.out_dir / "metrics.csv", METRICS_HEADER, [r.to_row() for r in report.records])
        if self.out_dir:
            self.save_outputs(report, dataset)
        return report

    def save_outputs(self, report: RunReport, dataset: LabeledImageSet):
        write_ledger_csv(report.ledger, self.out_dir / "ledger.csv")
        path = save_checkpoint(self.out_dir / "checkpoint.spnc", self.model, dataset.stats.to_dict())
        report.checkpoint = str(path)
        save_json(self.out_dir / "report.json", report.to_dict())


def train(
    model: SpecNetModel,
    cfg: TrainConfig,
    dataset: LabeledImageSet,
    held_out: Optional[LabeledImageSet] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> RunReport:
    return SpecTrainer(model, cfg, out_dir).train(dataset, held_out)
