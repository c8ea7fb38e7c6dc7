#!/usr/bin/env python3
"""
SpecNet Controller
Command-line orchestrator: train, eval, sweep-beta, compare and selftest
"""
import sys
import logging
import argparse
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from specnet.artifacts import save_json, write_csv
from specnet.checkpoint import load_checkpoint
from specnet.datasets import DATASETS, LabeledImageSet, NormalizationStats, denormalize, load_dataset
from specnet.errors import (
    CheckpointError, DatasetError, DimensionError, NumericIntegrityError, ShapeError, SpecNetError, UsageError,
)
from specnet.memory_profiler import MemLedger, relative_memory, write_ledger_csv, write_summary_csv
from specnet.network import SpecNetModel, build_spec_lenet_mini, calibrate_beta_scales, model_forward
from specnet.selftest import run_selftest
from specnet.tensors import nnz_fraction
from specnet.trainer import TrainConfig, SpecTrainer, evaluate

logger = logging.getLogger("SpecNetController")

COMMANDS = ("train", "eval", "sweep-beta", "compare", "selftest")
DENSITY_HEADER = ("beta", "avg_nnz_fraction")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class UsageArgumentParser(argparse.ArgumentParser):
    """Reports bad flags as UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(message)


def _beta_list(text: str) -> Tuple[float, ...]:
    try:
        betas = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"beta list must be comma-separated numbers, got '{text}'") from None
    if not betas:
        raise UsageError("beta list is empty")
    return betas


def _flag(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got '{text}'")


# option name -> converter; shared by flags and config-file keys
OPTION_TYPES: Dict[str, Callable[[str], Any]] = {
    "dataset": str,
    "data_dir": str,
    "beta": float,
    "beta_list": _beta_list,
    "epochs": int,
    "batch": int,
    "lr": float,
    "lr_period": int,
    "momentum": float,
    "seed": int,
    "subset": int,
    "out": str,
    "model": str,
    "precision": str,
    "mode": str,
    "activation": str,
    "reference_protocol": _flag,
    "log_level": str,
}


@dataclass
class RunConfig:
    command: str
    train: TrainConfig
    data_dir: Optional[str] = None
    out_dir: Path = config.RUNS_DIR
    model_path: Optional[str] = None
    betas: Tuple[float, ...] = config.SWEEP_BETAS
    log_level: str = config.LOG_LEVEL
    reference_protocol: bool = False
    synthetic_size: int = config.SYNTHETIC_SIZE
    explicit: frozenset = field(default_factory=frozenset)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "train": self.train.to_dict(),
            "data_dir": self.data_dir,
            "out_dir": str(self.out_dir),
            "model_path": self.model_path,
            "betas": list(self.betas),
            "reference_protocol": self.reference_protocol,
        }


def build_parser() -> argparse.ArgumentParser:
    parser = UsageArgumentParser(prog="specnet_controller.py", description="SpecNet spectral-domain CNN toolkit")
    parser.add_argument("command", choices=COMMANDS, help="what to run")
    s = argparse.SUPPRESS
    parser.add_argument("--config", default=s, help="key = value config file")
    parser.add_argument("--dataset", choices=DATASETS, default=s, help="mnist | cifar10 | synthetic")
    parser.add_argument("--data-dir", dest="data_dir", default=s, help="dataset root (or SPECNET_DATA_DIR)")
    parser.add_argument("--beta", type=float, default=s, help="spectral magnitude threshold (>= 0)")
    parser.add_argument("--beta-list", dest="beta_list", type=_beta_list, default=s, help="comma-separated sweep")
    parser.add_argument("--epochs", type=int, default=s)
    parser.add_argument("--batch", type=int, default=s)
    parser.add_argument("--lr", type=float, default=s)
    parser.add_argument("--lr-period", dest="lr_period", type=int, default=s, help="epochs between lr halvings")
    parser.add_argument("--momentum", type=float, default=s)
    parser.add_argument("--seed", type=int, default=s)
    parser.add_argument("--subset", type=int, default=s, help="training samples to draw")
    parser.add_argument("--out", default=s, help="output directory")
    parser.add_argument("--model", default=s, help="checkpoint path")
    parser.add_argument("--precision", choices=("f32", "f64"), default=s, help="byte width for memory accounting")
    parser.add_argument("--mode", choices=("spectral", "spatial"), default=s)
    parser.add_argument("--activation", default=s)
    parser.add_argument("--reference-protocol", dest="reference_protocol", action="store_true", default=s,
                        help="batch 128, 300 epochs")
    parser.add_argument("--log-level", dest="log_level", default=s)
    return parser


def read_config_file(path: str) -> Dict[str, Any]:
    """Flat `key = value` lines; `#` starts a comment"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e
    values: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTION_TYPES:
            raise UsageError(f"{path}:{number}: unknown key '{key}'")
        try:
            values[key] = OPTION_TYPES[key](value)
        except ValueError:
            raise UsageError(f"{path}:{number}: invalid value '{value}' for {key}") from None
    return values


def parse_args(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """defaults < config file < --reference-protocol < flags"""
    flags = vars(build_parser().parse_args(argv))
    command = flags.pop("command")
    options: Dict[str, Any] = {}
    if "config" in flags:
        options.update(read_config_file(flags.pop("config")))
    options.update(flags)

    train = TrainConfig(
        batch_size=config.BATCH_SIZE, lr=config.LR, lr_period=config.LR_PERIOD, momentum=config.MOMENTUM,
        epochs=config.EPOCHS, beta=config.BETA, seed=config.SEED, dataset=config.DATASET, subset=config.SUBSET,
        mode=config.MODE, activation=config.ACTIVATION, precision=config.PRECISION,
    )
    if options.get("reference_protocol"):
        train = replace(train, batch_size=config.REFERENCE_BATCH_SIZE, epochs=config.REFERENCE_EPOCHS, lr=config.REFERENCE_LR,
                        lr_period=config.REFERENCE_LR_PERIOD, momentum=config.REFERENCE_MOMENTUM)
    renames = {"batch": "batch_size"}
    for key in ("dataset", "beta", "epochs", "batch", "lr", "lr_period", "momentum", "seed", "subset",
                "precision", "mode", "activation"):
        if key in options:
            train = replace(train, **{renames.get(key, key): options[key]})
    train.validate()
    if train.dataset not in DATASETS:
        raise UsageError(f"unknown dataset '{train.dataset}', expected one of {DATASETS}")
    log_level = str(options.get("log_level", config.LOG_LEVEL)).upper()
    if log_level not in LOG_LEVELS:
        raise UsageError(f"log level must be one of {LOG_LEVELS}, got '{log_level}'")

    betas = options.get("beta_list", config.SWEEP_BETAS)
    if any(not (np.isfinite(b) and b >= 0) for b in betas):
        raise UsageError(f"every swept beta must be >= 0, got {list(betas)}")
    if command == "eval" and "model" not in options:
        raise UsageError("eval needs --model PATH")

    return RunConfig(
        command=command,
        train=train,
        data_dir=options.get("data_dir", str(config.DATA_DIR)),
        out_dir=Path(options.get("out", config.RUNS_DIR / command)),
        model_path=options.get("model"),
        betas=tuple(betas),
        log_level=log_level,
        reference_protocol=bool(options.get("reference_protocol", False)),
        explicit=frozenset(options),
    )


class SpecNetController:
    """
    SpecNet run orchestrator
    Wires datasets, models, the trainer and the memory profiler together per command
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out_dir = Path(cfg.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def banner(self, title: str):
        print("\n" + "=" * 60)
        print(f"SpecNet - {title}")
        print("=" * 60)

    def load_data(self) -> Tuple[LabeledImageSet, LabeledImageSet]:
        t = self.cfg.train
        # synthetic runs use their own default size unless --subset is given
        subset = t.subset if ("subset" in self.cfg.explicit or t.dataset != "synthetic") else None
        return load_dataset(t.dataset, self.cfg.data_dir, subset, t.seed, self.cfg.synthetic_size)

    def build_model(self, dataset: LabeledImageSet, mode: Optional[str] = None, beta: Optional[float] = None
                    ) -> SpecNetModel:
        t = self.cfg.train
        return build_spec_lenet_mini(dataset.sample_shape, dataset.num_classes, mode or t.mode,
                                     t.beta if beta is None else beta, t.activation, t.seed,
                                     calibration=self.calibration_images(dataset))

    def calibration_images(self, dataset: LabeledImageSet) -> np.ndarray:
        return dataset.images[:config.CALIBRATION_SAMPLES]

    def fit(self, model: SpecNetModel, train_set: LabeledImageSet, test_set: LabeledImageSet, out_dir: Path):
        t = replace(self.cfg.train, mode=model.mode, beta=model.spec.beta)
        return SpecTrainer(model, t, out_dir).train(train_set, test_set)

    def eval_batch(self, dataset: LabeledImageSet) -> Tuple[np.ndarray, np.ndarray]:
        count = min(len(dataset), self.cfg.train.batch_size)
        return dataset.images[:count], dataset.labels[:count]

    # ============== Commands ==============

    def train(self) -> int:
        self.banner("Train")
        train_set, test_set = self.load_data()
        model = self.build_model(train_set)
        report = self.fit(model, train_set, test_set, self.out_dir)
        print(f"  Mode: {model.mode}, beta: {model.spec.beta}")
        print(f"  Final train accuracy: {report.final_train_accuracy:.4f}")
        if report.final_eval_accuracy is not None:
            print(f"  Final eval accuracy:  {report.final_eval_accuracy:.4f}")
        print(f"  Feature bytes avg/peak: {report.ledger.average_bytes:.1f} / {report.ledger.peak_bytes}")
        print(f"  Train time: {sum(report.epoch_seconds):.1f}s over {len(report.epoch_seconds)} epochs")
        print(f"  Artifacts: {self.out_dir}")
        return config.EXIT_OK

    def evaluate(self) -> int:
        self.banner("Evaluate")
        model, stats = load_checkpoint(self.cfg.model_path)
        if "beta" in self.cfg.explicit:
            model = model.with_mode(model.mode, self.cfg.train.beta)
        if "mode" in self.cfg.explicit:
            model = model.with_mode(self.cfg.train.mode)
        _, test_set = self.load_data()
        if stats:
            test_set = restandardize(test_set, NormalizationStats.from_dict(stats))
        loss, accuracy, ledger = evaluate(model, test_set, self.cfg.train.batch_size, self.cfg.train.precision)
        write_ledger_csv(ledger, self.out_dir / "ledger.csv")
        save_json(self.out_dir / "eval.json", {
            "model": self.cfg.model_path, "mode": model.mode, "beta": model.spec.beta, "samples": len(test_set),
            "loss": loss, "accuracy": accuracy, "memory": ledger.summary(),
        })
        print(f"  {len(test_set)} samples: loss {loss:.4f}, accuracy {accuracy:.4f}")
        return config.EXIT_OK

    def sweep_beta(self) -> int:
        """
        Memory ratios run the baseline-trained weights, recalibrated on the training images,
        over one fixed batch at every beta. Accuracy ratios come from a spectral model
        trained per beta with the baseline's seed.
        """
        self.banner("Beta Sweep")
        train_set, test_set = self.load_data()
        held_out = test_set if len(test_set) else train_set

        baseline = self.build_model(train_set, mode="spatial")
        base_report = self.fit(baseline, train_set, test_set, self.out_dir / "baseline")
        base_accuracy = final_accuracy(base_report)
        images, _ = self.eval_batch(held_out)
        base_ledger = MemLedger()
        model_forward(baseline, images, base_ledger, self.cfg.train.precision)
        print(f"  Baseline accuracy: {base_accuracy:.4f}")

        calibrated = calibrate_beta_scales(baseline, self.calibration_images(train_set))
        summary, density = [], []
        for beta in self.cfg.betas:
            spectral = calibrated.with_mode("spectral", beta)
            ledger = MemLedger()
            _, caches, _ = model_forward(spectral, images, ledger, self.cfg.train.precision)
            avg_ratio, peak_ratio = relative_memory(ledger, base_ledger)
            fraction = support_fraction(caches)

            model = self.build_model(train_set, mode="spectral", beta=beta)
            report = self.fit(model, train_set, test_set, self.out_dir / f"beta_{beta:g}")
            accuracy = final_accuracy(report)
            accuracy_ratio = accuracy / base_accuracy if base_accuracy > 0 else float("nan")

            summary.append((float(beta), avg_ratio, peak_ratio, accuracy_ratio))
            density.append((float(beta), fraction))
            print(f"  beta={beta:<5g} avg {avg_ratio:.3f}  peak {peak_ratio:.3f}  "
                  f"nnz {fraction:.3f}  accuracy ratio {accuracy_ratio:.3f}")

        write_summary_csv(summary, self.out_dir / "sweep_summary.csv")
        write_csv(self.out_dir / "sweep_density.csv", DENSITY_HEADER, density)
        return config.EXIT_OK

    def compare(self) -> int:
        """Spectral vs spatial-baseline logits and memory on one batch with shared weights"""
        self.banner("Compare")
        train_set, test_set = self.load_data()
        held_out = test_set if len(test_set) else train_set
        if self.cfg.model_path:
            model, stats = load_checkpoint(self.cfg.model_path)
            if stats:
                held_out = restandardize(held_out, NormalizationStats.from_dict(stats))
        else:
            model = self.build_model(train_set)
        beta = self.cfg.train.beta
        spectral = model.with_mode("spectral", beta)
        spatial = model.with_mode("spatial", beta)
        images, labels = self.eval_batch(held_out)

        spec_ledger, base_ledger = MemLedger(), MemLedger()
        spec_logits, _, _ = model_forward(spectral, images, spec_ledger, self.cfg.train.precision)
        base_logits, _, _ = model_forward(spatial, images, base_ledger, self.cfg.train.precision)
        deviation = float(np.max(np.abs(spec_logits - base_logits)))
        avg_ratio, peak_ratio = relative_memory(spec_ledger, base_ledger)
        result = {
            "beta": beta,
            "samples": len(labels),
            "max_logit_deviation": deviation,
            "spectral_accuracy": float(np.mean(np.argmax(spec_logits, axis=1) == labels)),
            "spatial_accuracy": float(np.mean(np.argmax(base_logits, axis=1) == labels)),
            "avg_memory_ratio": avg_ratio,
            "peak_memory_ratio": peak_ratio,
            "logits": [
                {"label": int(label), "spectral_logits": s.tolist(), "spatial_logits": b.tolist()}
                for label, s, b in zip(labels, spec_logits, base_logits)
            ],
        }
        save_json(self.out_dir / "compare.json", result)
        print(f"  beta={beta:g}: max logit deviation {deviation:.3e}")
        print(f"  accuracy spectral {result['spectral_accuracy']:.4f} / spatial {result['spatial_accuracy']:.4f}")
        print(f"  memory ratio avg {avg_ratio:.3f}, peak {peak_ratio:.3f}")
        if beta == 0 and deviation > config.COMPARE_TOLERANCE:
            raise NumericIntegrityError(
                f"spectral and spatial logits differ by {deviation:.3e} at beta=0 (limit {config.COMPARE_TOLERANCE})")
        return config.EXIT_OK

    def selftest(self) -> int:
        self.banner("Self Test")
        results = run_selftest(self.cfg.train.seed)
        for r in results:
            print(f"  [{'PASS' if r.passed else 'FAIL'}] {r.name:<9} cases={r.cases:<4} max error={r.max_error:.3e}")
        save_json(self.out_dir / "selftest.json", {"suites": [r.to_dict() for r in results]})
        passed = all(r.passed for r in results)
        print(f"\n  {'All suites passed' if passed else 'Self test FAILED'}")
        return config.EXIT_OK if passed else config.EXIT_NUMERIC

    def execute(self) -> int:
        save_json(self.out_dir / "run_config.json", self.cfg.to_dict())
        handlers = {
            "train": self.train,
            "eval": self.evaluate,
            "sweep-beta": self.sweep_beta,
            "compare": self.compare,
            "selftest": self.selftest,
        }
        return handlers[self.cfg.command]()


def restandardize(dataset: LabeledImageSet, stats: NormalizationStats) -> LabeledImageSet:
    """Re-apply a checkpoint's normalization to a split standardized with other statistics"""
    raw = denormalize(dataset.images, dataset.stats)
    return LabeledImageSet.from_raw(raw, dataset.labels, dataset.num_classes, stats)


def final_accuracy(report) -> float:
    value = report.final_eval_accuracy
    return report.final_train_accuracy if value is None else value


def support_fraction(caches: List[List[Any]]) -> float:
    """Mean fraction of spectral entries kept by the threshold over every conv block"""
    fractions = [
        nnz_fraction(y) for sample in caches for c in sample if c.kind == "spec-conv" for y in c.data["block"].yhat
    ]
    return float(np.mean(fractions)) if fractions else 0.0


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (UsageError, ShapeError, DimensionError)):
        return config.EXIT_USAGE
    if isinstance(error, (DatasetError, CheckpointError)):
        return config.EXIT_DATA
    return config.EXIT_NUMERIC


def run(cfg: RunConfig) -> int:
    try:
        return SpecNetController(cfg).execute()
    except SpecNetError as e:
        code = exit_code_for(e)
        logger.error(f"{cfg.command} failed ({type(e).__name__}): {e}")
        return code
    except OSError as e:
        # unwritable output directory
        logger.error(f"{cfg.command} failed: {e}")
        return config.EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = parse_args(argv)
    except UsageError as e:
        print(f"specnet_controller.py: error: {e}", file=sys.stderr)
        return config.EXIT_USAGE
    logging.basicConfig(level=cfg.log_level, format=config.LOG_FORMAT)
    logger.info(f"Running {cfg.command} with {cfg.train.dataset} (seed {cfg.train.seed})")
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
