import logging

import numpy as np
import pytest

from vstree.data import synth, train_test_split
from vstree.errors import InvalidArgumentError
from vstree.gradient_engine import PosteriorNoise
from vstree.predictive import regression_metrics
from vstree.soft_tree import OutputMode
from vstree.vsgbm import (
    InverseGammaPosterior,
    VsgbmConfig,
    conjugate_noise_posterior,
    ensemble_mean,
    fit_vsgbm,
    sample_noise_variance,
    tree_means,
    tree_noise,
    vsgbm_function_sample,
)
from vstree.vst_training import TrainConfig, fit_vst


@pytest.fixture
def small_vsgbm():
    data = synth("tail_line", 80, 0.1, 0)
    config = VsgbmConfig(num_trees=2, tree=TrainConfig(steps=20, batch_size=40, learning_rate=1e-2, depth=2, rank=1))
    return data, fit_vsgbm(data.features, data.target, config)


def test_noise_posterior_is_conjugate_update(small_vsgbm):
    data, model = small_vsgbm
    residuals = model.residuals
    assert model.noise_posterior.shape - model.config.a_sigma == data.n
    assert model.noise_posterior.scale - model.config.b_sigma == pytest.approx(float(residuals @ residuals), rel=1e-12)


def test_trees_are_mean_only_with_distinct_seeds(small_vsgbm):
    _, model = small_vsgbm
    assert len(model.trees) == 2
    assert all(tree.spec.output_mode is OutputMode.MEAN_ONLY for tree in model.trees)
    assert model.trees[0].config.seed != model.trees[1].config.seed


def test_single_round_is_a_mean_only_tree():
    data = synth("tail_line", 60, 0.1, 1)
    config = VsgbmConfig(num_trees=1, tree=TrainConfig(steps=15, batch_size=30, depth=2, rank=1, seed=7))
    boosted = fit_vsgbm(data.features, data.target, config)
    alone = fit_vst(data.features, data.target, config.tree_config(0))
    assert alone.spec.output_mode is OutputMode.MEAN_ONLY
    np.testing.assert_array_equal(boosted.trees[0].posterior.to_vector(), alone.posterior.to_vector())


def test_ensemble_mean_adds_the_scaled_trees(small_vsgbm):
    data, model = small_vsgbm
    X_std = model.standardization.transform_features(data.features)
    rng = np.random.default_rng(2)
    noises = [tree_noise(tree, rng, 3) for tree in model.trees]
    per_tree = tree_means(model.trees, X_std, noises)
    assert per_tree.shape == (2, 3, data.n)
    np.testing.assert_allclose(ensemble_mean(model.trees, X_std, noises, 0.4), 0.4 * per_tree.sum(axis=0), atol=1e-12)
    np.testing.assert_allclose(
        ensemble_mean(model.trees, X_std, noises, 1.0),
        sum(ensemble_mean([tree], X_std, [noise], 1.0) for tree, noise in zip(model.trees, noises)),
        atol=1e-12,
    )


def test_each_round_is_logged_with_its_residual_norm(caplog):
    data = synth("tail_line", 40, 0.1, 0)
    caplog.set_level(logging.INFO, logger="vstree.vsgbm")
    fit_vsgbm(data.features, data.target, VsgbmConfig(num_trees=2, tree=TrainConfig(steps=5, batch_size=20, depth=1, rank=0)))
    rounds = [record.getMessage() for record in caplog.records if record.getMessage().startswith("Boosting round")]
    assert len(rounds) == 2
    assert all("residual norm" in message for message in rounds)


def test_conjugate_update_by_hand():
    post = conjugate_noise_posterior(3.0, 1.0, np.array([1.0, -2.0]))
    assert post == InverseGammaPosterior(shape=5.0, scale=6.0)


def test_noise_variance_draw_is_deterministic():
    post = InverseGammaPosterior(shape=13.0, scale=3.5)
    assert sample_noise_variance(post, 0.3) == sample_noise_variance(post, 0.3)
    assert sample_noise_variance(post, 0.9) > sample_noise_variance(post, 0.1)


def test_noise_variance_rejects_uniform_outside_unit_interval():
    with pytest.raises(InvalidArgumentError):
        sample_noise_variance(InverseGammaPosterior(3.0, 1.0), 0.0)


def test_a_sigma_must_exceed_one():
    with pytest.raises(InvalidArgumentError):
        VsgbmConfig(a_sigma=1.0)


def test_function_sample_is_deterministic(small_vsgbm):
    data, model = small_vsgbm
    first = vsgbm_function_sample(model, data.features, 5)
    second = vsgbm_function_sample(model, data.features, 5)
    np.testing.assert_array_equal(first[0], second[0])
    assert first[1] == second[1] > 0


def test_function_sample_rejects_wrong_width(small_vsgbm):
    _, model = small_vsgbm
    with pytest.raises(InvalidArgumentError):
        vsgbm_function_sample(model, np.zeros((3, 2)), 0)


@pytest.mark.slow
def test_noise_variance_matches_analytic_mean():
    post = InverseGammaPosterior(shape=13.0, scale=3.5)
    uniforms = np.random.default_rng(0).uniform(size=1_000_000)
    assert sample_noise_variance(post, uniforms).mean() == pytest.approx(3.5 / 12.0, rel=0.02)


@pytest.mark.slow
def test_more_rounds_leave_smaller_residuals():
    data = synth("friedman", 400, 0.5, 0)
    config = VsgbmConfig(num_trees=4, tree=TrainConfig(steps=2000, learning_rate=1e-2, depth=2, rank=1, seed=0))
    model = fit_vsgbm(data.features, data.target, config)
    X_std = model.standardization.transform_features(data.features)
    y_std = model.standardization.transform_target(data.target)
    at_mean = [
        PosteriorNoise(noise_std=np.zeros((1, tree.posterior.p)), noise_lowrank=np.zeros((1, tree.posterior.k)))
        for tree in model.trees
    ]

    def residual_norm(count):
        return np.linalg.norm(y_std - ensemble_mean(model.trees[:count], X_std, at_mean[:count], config.shrinkage)[0])

    assert residual_norm(4) <= residual_norm(1)


@pytest.mark.slow
def test_function_samples_average_to_training_targets():
    data = synth("linear", 200, 0.0, 0)
    config = VsgbmConfig(num_trees=2, tree=TrainConfig(steps=3000, learning_rate=1e-2, depth=2, rank=2))
    model = fit_vsgbm(data.features, data.target, config)
    draws = np.array([vsgbm_function_sample(model, data.features[:1], seed)[0][0] for seed in range(256)])
    std = model.standardization
    assert abs(std.transform_target(draws.mean()) - std.transform_target(data.target[0])) < 0.05


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_boosting_beats_a_single_tree_on_friedman(seed):
    data = synth("friedman", 2000, 1.0, seed)
    split = train_test_split(data.n, 0.8, seed)
    train, test = data.subset(split.train_indices), data.subset(split.test_indices)
    tree = TrainConfig(steps=3000, learning_rate=1e-2, depth=3, rank=2, seed=seed)
    single = fit_vsgbm(train.features, train.target, VsgbmConfig(num_trees=1, tree=tree))
    boosted = fit_vsgbm(train.features, train.target, VsgbmConfig(num_trees=5, tree=tree))
    rmse_single = regression_metrics(single, test.features, test.target, 64, seed, original_units=True).rmse
    rmse_boosted = regression_metrics(boosted, test.features, test.target, 64, seed, original_units=True).rmse
    assert rmse_boosted <= rmse_single
