import dataclasses

import numpy as np
import pytest

from cpformer import autodiff as ad
from cpformer.errors import ConfigError, TrainingError
from cpformer.model import predict
from cpformer.training import (LOG_COLUMNS, TrainConfig, check_ramp, joint_loss, load_checkpoint, ramp_schedule,
                               ramp_step_products, save_checkpoint, sgd_step, train)


def test_ramp_schedule_values():
    assert ramp_schedule(0.1, 0.01, 0) == 0.1
    assert ramp_schedule(0.1, 0.01, 100) == pytest.approx(0.1 * 1.01**100, rel=1e-14)
    with pytest.raises(ValueError):
        ramp_schedule(0.1, 1.5, 3)


def test_learning_rate_decay():
    cfg = TrainConfig(ramp=True, lr=0.01)
    assert cfg.decay == 0.6
    assert cfg.learning_rate(0) == 0.01
    assert cfg.learning_rate(31) == pytest.approx(0.01 / 32**0.6)
    assert TrainConfig().learning_rate(1000) == 0.01


@pytest.mark.parametrize("kwargs", [
    dict(ramp=True, lr_decay=0.4), dict(ramp=True, ramp_rho=0.0), dict(batch_size=0), dict(lr=0.0),
    dict(clip_norm=0.0), dict(lambda_con=-1.0),
])
def test_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_ramp_products_and_check():
    cfg = TrainConfig(ramp=True, lr=0.01, ramp_lambda0=0.1, ramp_rho=0.01)
    prods = ramp_step_products(cfg, 500)
    assert prods[0] == pytest.approx(0.001)
    assert prods[-1] == pytest.approx(0.01 / 500**0.6 * 0.1 * 1.01**499)
    assert check_ramp(cfg, 500) == pytest.approx(prods.max())
    # the product grows without bound, so a long enough horizon must breach the ceiling
    with pytest.raises(ConfigError):
        check_ramp(cfg, 5000)


def test_sgd_step():
    out = sgd_step({"w": np.array([1.0, 2.0])}, {"w": np.array([10.0, -10.0])}, 0.1)
    np.testing.assert_allclose(out["w"], [0.0, 3.0])


def test_joint_loss_recomposes(tiny_setup):
    model, params, samples = tiny_setup
    total, b = joint_loss(samples.subset(np.arange(5)), params, model, TrainConfig(lambda_phys=0.7, lambda_con=0.3))
    assert total.value == b.total
    assert abs(b.recomposed() - b.total) <= 1e-12
    assert set(b.residual_ms) == {"R1", "R2", "R3", "R4", "Ry"}


def test_train_logs_every_step(tiny_setup, tmp_path):
    model, params, samples = tiny_setup
    cfg = TrainConfig(epochs=2, batch_size=16, lr=0.01, seed=1)
    new, hist = train(samples, params, model, cfg)
    per_epoch = -(-len(samples) // 16)
    assert len(hist) == 2 * per_epoch
    assert [r.step for r in hist.records] == list(range(len(hist)))
    assert not np.array_equal(new["head.W1"], params["head.W1"])
    hist.to_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == ",".join(LOG_COLUMNS) and len(lines) == len(hist) + 1


def test_max_steps_and_ramp_lambda(tiny_setup):
    model, params, samples = tiny_setup
    cfg = TrainConfig(epochs=50, batch_size=8, ramp=True, max_steps=7)
    _, hist = train(samples, params, model, cfg)
    assert len(hist) == 7
    np.testing.assert_allclose(hist.column("lambda_phys"), 0.1 * 1.01 ** np.arange(7))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_training_error(tiny_setup):
    model, params, samples = tiny_setup
    with pytest.raises(TrainingError) as info:
        train(samples, params, model, TrainConfig(epochs=20, lr=1e6))
    assert info.value.step >= 0


def test_clipping_bounds_update(tiny_setup):
    model, params, samples = tiny_setup
    cfg = TrainConfig(epochs=1, batch_size=len(samples), lr=1.0, clip_norm=1e-3, max_steps=1)
    new, _ = train(samples, params, model, cfg)
    moved = np.sqrt(sum(np.sum((new[k] - params[k]) ** 2) for k in params))
    assert moved == pytest.approx(1e-3, rel=1e-9)


def test_checkpoint_round_trip(tiny_setup, tmp_path):
    model, params, _ = tiny_setup
    save_checkpoint(tmp_path / "c.cpf", params, model, {"note": "x"})
    loaded, m2, meta = load_checkpoint(tmp_path / "c.cpf")
    assert m2 == model and meta == {"note": "x"}
    assert list(loaded) == list(params)
    for k in params:
        np.testing.assert_array_equal(loaded[k], params[k])
        assert loaded[k].shape == np.shape(params[k])


def test_training_is_deterministic(tiny_setup, tmp_path):
    model, params, samples = tiny_setup
    cfg = TrainConfig(epochs=1, batch_size=8, seed=5)
    for name in ("a", "b"):
        p, h = train(samples, params, model, cfg)
        h.to_csv(tmp_path / f"{name}.csv")
        save_checkpoint(tmp_path / f"{name}.cpf", p, model)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.cpf").read_bytes() == (tmp_path / "b.cpf").read_bytes()
    _, h_other = train(samples, params, model, dataclasses.replace(cfg, seed=6))
    assert h_other.column("total")[0] != h.column("total")[0]


def test_sgd_examples():
    assert sgd_step({"p": np.array(1.0)}, {"p": np.array(2.0)}, 0.1)["p"] == pytest.approx(0.8)
    p = {"w": np.array([0.5, -1.0])}
    np.testing.assert_array_equal(sgd_step(p, {"w": np.zeros(2)}, 0.3)["w"], p["w"])
    g = {"w": np.array([1.0, 2.0])}
    twice = sgd_step(sgd_step(p, g, 0.1), g, 0.1)
    np.testing.assert_allclose(twice["w"], p["w"] - 0.2 * g["w"], atol=1e-15)


def test_zero_lambdas_leave_data_mse(tiny_setup):
    model, params, samples = tiny_setup
    batch = samples.subset(np.arange(6))
    total, b = joint_loss(batch, params, model, TrainConfig(lambda_phys=0, lambda_con=0, lambda_reg=0))
    assert total.value == pytest.approx(np.mean((predict(params, batch.windows_cur, model) - batch.y) ** 2), abs=1e-15)


def test_gradients_stay_exact_during_training(tiny_setup):
    model, params, samples = tiny_setup
    cfg = TrainConfig(epochs=1, batch_size=8, lr=0.01, lambda_reg=1e-3)
    batch = samples.subset(np.arange(3))
    for steps in (0, 3, 6):
        p, _ = train(samples, params, model, dataclasses.replace(cfg, max_steps=steps))
        assert ad.check_gradients(lambda q: joint_loss(batch, q, model, cfg)[0], p) <= 1e-4
