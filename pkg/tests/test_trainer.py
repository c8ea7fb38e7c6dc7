import json
import math

import numpy as np
import numpy.testing as npt
import pytest

from specnet.checkpoint import load_checkpoint
from specnet.datasets import load_dataset, synthetic_shapes
from specnet.errors import NumericIntegrityError, ShapeError, UsageError
from specnet.network import SpecNetModel, build_spec_lenet_mini, lenet_mini_spec
from specnet.trainer import (
    METRICS_HEADER, SgdState, SpecTrainer, TrainConfig, evaluate, lr_at_epoch, sgd_momentum_step, train,
)


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at_epoch(cfg, 0) == 0.02
    assert lr_at_epoch(cfg, 49) == 0.02
    assert lr_at_epoch(cfg, 50) == 0.01
    assert lr_at_epoch(cfg, 100) == pytest.approx(0.005)
    with pytest.raises(UsageError):
        lr_at_epoch(cfg, -1)


def test_sgd_plain_step():
    params = {"w": np.array(1.0)}
    updated, _ = sgd_momentum_step(params, {"w": np.array(2.0)}, SgdState.zeros_like(params, 0.0), 0.1)
    assert float(updated["w"]) == pytest.approx(0.8)


def test_sgd_momentum_two_steps():
    params = {"w": np.array(0.0)}
    state = SgdState.zeros_like(params, 0.95)
    for _ in range(2):
        params, state = sgd_momentum_step(params, {"w": np.array(1.0)}, state, 0.02)
    assert float(params["w"]) == pytest.approx(-0.059)
    assert float(state.velocity["w"]) == pytest.approx(-0.039)
    assert state.lr == 0.02


def test_sgd_zero_gradient_keeps_params(rng):
    params = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(4)}
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    updated, _ = sgd_momentum_step(params, zeros, SgdState.zeros_like(params, 0.95), 0.02)
    for name in params:
        npt.assert_array_equal(updated[name], params[name])


def test_sgd_shape_mismatch():
    params = {"w": np.zeros(3)}
    with pytest.raises(ShapeError):
        sgd_momentum_step(params, {"w": np.zeros(4)}, SgdState.zeros_like(params, 0.9), 0.1)
    with pytest.raises(ShapeError):
        sgd_momentum_step(params, {"v": np.zeros(3)}, SgdState.zeros_like(params, 0.9), 0.1)


@pytest.mark.parametrize("override", [
    {"batch_size": 0}, {"lr": 0.0}, {"momentum": 1.0}, {"beta": -0.5}, {"epochs": 0},
    {"mode": "wavelet"}, {"precision": "f16"}, {"activation": "relu"}, {"seed": -1},
])
def test_config_validation(override):
    with pytest.raises(UsageError):
        TrainConfig(**override).validate()


def _small_run(tmp_path, name, mode="spectral", epochs=1, n=64):
    cfg = TrainConfig(batch_size=16, epochs=epochs, beta=0.5, mode=mode, subset=n, seed=5)
    train_set, test_set = load_dataset("synthetic", subset=n, seed=cfg.seed)
    model = build_spec_lenet_mini(train_set.sample_shape, 2, mode, cfg.beta, seed=cfg.seed)
    return train(model, cfg, train_set, test_set, tmp_path / name), model


def test_one_epoch_run_writes_outputs(tmp_path):
    report, model = _small_run(tmp_path, "run")
    assert len(report.rows("train")) == 1
    assert len(report.rows("eval")) == 1
    assert all(math.isfinite(r.loss) for r in report.records)
    assert report.records[0].peak_feature_bytes >= report.records[0].avg_feature_bytes > 0

    out = tmp_path / "run"
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(METRICS_HEADER)
    assert [line.split(",")[:2] for line in lines[1:]] == [["1", "train"], ["1", "eval"]]
    assert (out / "ledger.csv").read_text().startswith("step,layer,mode,bytes\n")

    loaded, stats = load_checkpoint(out / "checkpoint.spnc")
    npt.assert_array_equal(loaded.params["layer5.weights"], model.params["layer5.weights"])
    assert stats is not None and len(stats["mean"]) == 1

    saved = json.loads((out / "report.json").read_text())
    assert saved["epochs"] == 1
    assert saved["config"]["beta"] == 0.5
    assert len(saved["seconds"]["per_epoch"]) == 1
    assert saved["seconds"]["total"] >= 0.0
    assert "seconds" not in lines[0]


def test_identical_runs_write_identical_metrics(tmp_path):
    _small_run(tmp_path, "a", epochs=2, n=32)
    _small_run(tmp_path, "b", epochs=2, n=32)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_training_rejects_mismatched_dataset():
    model = build_spec_lenet_mini((1, 28, 28), 10)
    with pytest.raises(ShapeError):
        train(model, TrainConfig(epochs=1), synthetic_shapes(8))


def test_evaluate_zero_model():
    data = synthetic_shapes(6)
    spec = lenet_mini_spec(data.sample_shape, 2)
    model = SpecNetModel(spec, {name: np.zeros(shape) for name, shape in spec.param_shapes().items()})
    loss, _, ledger = evaluate(model, data, batch_size=4)
    assert loss == pytest.approx(math.log(2))
    assert len(ledger) == 2 * 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    data = synthetic_shapes(4)
    model = build_spec_lenet_mini(data.sample_shape, 2, mode="spatial")
    model.params["layer5.weights"] = np.full_like(model.params["layer5.weights"], 1e308)
    trainer = SpecTrainer(model, TrainConfig(batch_size=4, epochs=1, mode="spatial"))
    with pytest.raises(NumericIntegrityError):
        trainer.train(data)


@pytest.mark.slow
def test_spatial_baseline_learns_synthetic_set():
    cfg = TrainConfig(batch_size=16, epochs=30, mode="spatial", subset=128)
    train_set, _ = load_dataset("synthetic", subset=cfg.subset, seed=cfg.seed)
    model = build_spec_lenet_mini(train_set.sample_shape, 2, "spatial", seed=cfg.seed)
    report = train(model, cfg, train_set)
    assert report.final_train_accuracy >= 0.95
    assert report.records[-1].loss < report.records[0].loss


@pytest.mark.slow
def test_spectral_model_learns_synthetic_set():
    cfg = TrainConfig(batch_size=16, epochs=30, beta=0.5, subset=128)
    train_set, _ = load_dataset("synthetic", subset=cfg.subset, seed=cfg.seed)
    model = build_spec_lenet_mini(train_set.sample_shape, 2, "spectral", cfg.beta, seed=cfg.seed)
    report = train(model, cfg, train_set)
    assert report.final_train_accuracy >= 0.95
    assert report.records[-1].loss < report.records[0].loss
