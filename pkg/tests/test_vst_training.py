import logging

import numpy as np
import pytest

from vstree.data import synth
from vstree.errors import InvalidArgumentError
from vstree.predictive import draw_predictions, epistemic_uncertainty
from vstree.vst_training import TrainConfig, fit_vst, init_posterior, with_seed


def linear_data(n: int = 64, seed: int = 0):
    data = synth("linear", n, 0.1, seed)
    return data.features, data.target


def test_same_seed_gives_identical_posteriors(tiny_train_config):
    X, y = linear_data()
    first = fit_vst(X, y, tiny_train_config)
    second = fit_vst(X, y, tiny_train_config)
    np.testing.assert_array_equal(first.posterior.to_vector(), second.posterior.to_vector())


def test_different_seed_changes_the_posterior(tiny_train_config):
    X, y = linear_data()
    first = fit_vst(X, y, tiny_train_config)
    second = fit_vst(X, y, with_seed(tiny_train_config, 4))
    assert not np.array_equal(first.posterior.mean, second.posterior.mean)


def test_training_improves_the_elbo():
    X, y = linear_data()
    config = TrainConfig(steps=300, batch_size=64, learning_rate=1e-2, depth=2, rank=2, seed=0)
    model = fit_vst(X, y, config)
    assert model.final_elbo > model.initial_elbo
    assert model.training_log[-1].step == 300


def test_training_progress_is_logged_at_info(caplog):
    X, y = linear_data()
    caplog.set_level(logging.INFO, logger="vstree.vst_training")
    fit_vst(X, y, TrainConfig(steps=100, batch_size=32, depth=1, rank=1, seed=0))
    steps = [record for record in caplog.records if record.getMessage().startswith("step ")]
    assert [record.getMessage().split(":")[0] for record in steps] == ["step 50", "step 100"]
    assert all(record.levelno == logging.INFO for record in steps)


def test_init_posterior_shape_and_spread(tiny_train_config):
    spec = tiny_train_config.tree_spec(3)
    posterior = init_posterior(spec, tiny_train_config, 0)
    assert posterior.p == spec.param_count
    assert posterior.k == 2
    np.testing.assert_allclose(posterior.std, 1e-3, rtol=1e-9)
    assert np.all(posterior.factor == 0)


def test_model_records_its_standardization(tiny_train_config):
    X, y = linear_data()
    model = fit_vst(X, y, tiny_train_config)
    assert model.standardization.target_mean == pytest.approx(y.mean())
    assert model.standardization.target_std == pytest.approx(y.std())


def test_constant_target_rejected(tiny_train_config):
    X, _ = linear_data()
    with pytest.raises(InvalidArgumentError):
        fit_vst(X, np.ones(X.shape[0]), tiny_train_config)


def test_constant_target_allowed_when_requested():
    X, _ = linear_data()
    config = TrainConfig(steps=5, batch_size=16, depth=1, rank=0, allow_constant_target=True)
    model = fit_vst(X, np.ones(X.shape[0]), config)
    assert model.standardization.constant_target


def test_invalid_config_rejected():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(depth=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(beta=0.0)


def test_warm_start_dimension_checked(tiny_train_config):
    X, y = linear_data()
    other = init_posterior(tiny_train_config.tree_spec(2), tiny_train_config, 0)
    with pytest.raises(InvalidArgumentError):
        fit_vst(X, y, tiny_train_config, init=other)


def test_single_row_rejected(tiny_train_config):
    with pytest.raises(InvalidArgumentError):
        fit_vst(np.zeros((1, 1)), np.zeros(1), tiny_train_config)


@pytest.mark.slow
def test_step_function_fit():
    data = synth("step", 500, 0.0, 0)
    config = TrainConfig(steps=20000, batch_size=256, learning_rate=1e-2, depth=5, rank=5, seed=0)
    model = fit_vst(data.features, data.target, config)
    grid = np.linspace(-1, 1, 400)[:, None]
    truth = (grid[:, 0] > 0).astype(float)
    draws = draw_predictions(model, grid, 64, 0)
    prediction = model.standardization.inverse_target(draws.means.mean(axis=0))
    assert np.sqrt(np.mean((prediction - truth) ** 2)) <= 0.30


@pytest.mark.slow
def test_posterior_contracts_with_more_data():
    grid = np.linspace(-1, 1, 50)[:, None]
    config = TrainConfig(steps=3000, batch_size=64, learning_rate=1e-2, depth=2, rank=2, seed=0)
    spread = []
    for n in (50, 2000):
        data = synth("linear", n, 0.1, 0)
        model = fit_vst(data.features, data.target, config)
        spread.append(float(np.mean(epistemic_uncertainty(model, grid, 128, 0))))
    assert spread[1] < spread[0]
