import numpy as np
import pytest

from vstree.errors import InvalidArgumentError
from vstree.gradient_engine import (
    AdamState,
    GradientTape,
    ObjectiveKind,
    PosteriorNoise,
    adam_step,
    objective_gradient,
)
from vstree.lowrank_gaussian import IsotropicPrior, LowRankGaussian, inverse_softplus, kl_to_isotropic
from vstree.soft_tree import LeafKind, SoftTreeSpec


def problem(depth: int, leaf_kind: LeafKind, rank: int, seed: int = 0):
    spec = SoftTreeSpec(depth=depth, feature_dim=2, leaf_kind=leaf_kind, beta=2.0)
    rng = np.random.default_rng(seed)
    p = spec.param_count
    posterior = LowRankGaussian(
        mean=0.3 * rng.standard_normal(p),
        diag_raw=np.full(p, inverse_softplus(0.1)) + 0.1 * rng.standard_normal(p),
        factor=0.1 * rng.standard_normal((p, rank)),
    )
    X = rng.standard_normal((6, 2))
    y = rng.standard_normal(6)
    noise = PosteriorNoise.draw(rng, 2, p, rank)
    return spec, posterior, X, y, noise


def central_differences(spec, posterior, X, y, noise, kind, kl_scale):
    prior = IsotropicPrior(0.8)
    vector = posterior.to_vector()
    grad = np.empty_like(vector)
    for i in range(vector.shape[0]):
        h = 1e-5 * max(1.0, abs(vector[i]))
        values = []
        for sign in (1.0, -1.0):
            shifted = vector.copy()
            shifted[i] += sign * h
            dist = LowRankGaussian.from_vector(shifted, posterior.p, posterior.k)
            values.append(objective_gradient(dist, X, y, spec, prior, noise, kind, kl_scale).value)
        grad[i] = (values[0] - values[1]) / (2 * h)
    return grad


@pytest.mark.parametrize("depth", [1, 2, 3])
@pytest.mark.parametrize("leaf_kind", [LeafKind.CONSTANT, LeafKind.LINEAR])
@pytest.mark.parametrize("rank", [0, 1, 3])
@pytest.mark.parametrize("kind", [ObjectiveKind.ELBO, ObjectiveKind.BOOSTED_RESIDUAL])
def test_gradient_matches_finite_differences(depth, leaf_kind, rank, kind):
    spec, posterior, X, y, noise = problem(depth, leaf_kind, rank)
    result = objective_gradient(posterior, X, y, spec, IsotropicPrior(0.8), noise, kind, 0.5)
    expected = central_differences(spec, posterior, X, y, noise, kind, 0.5)
    np.testing.assert_allclose(result.gradient, expected, rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("rank", [0, 1, 3])
def test_kl_gradient_matches_finite_differences(rank):
    _, posterior, _, _, _ = problem(3, LeafKind.LINEAR, rank, seed=rank)
    prior = IsotropicPrior(0.8)
    tape = GradientTape(posterior)
    result = tape.gradient(tape.kl(prior))

    vector = posterior.to_vector()
    expected = np.empty_like(vector)
    for i in range(vector.shape[0]):
        h = 1e-5 * max(1.0, abs(vector[i]))
        up, down = vector.copy(), vector.copy()
        up[i] += h
        down[i] -= h
        expected[i] = (
            kl_to_isotropic(LowRankGaussian.from_vector(up, posterior.p, rank), prior)
            - kl_to_isotropic(LowRankGaussian.from_vector(down, posterior.p, rank), prior)
        ) / (2 * h)
    np.testing.assert_allclose(result, expected, rtol=1e-6, atol=1e-8)


def test_objective_is_data_fit_minus_scaled_kl():
    spec, posterior, X, y, noise = problem(2, LeafKind.LINEAR, 1)
    result = objective_gradient(posterior, X, y, spec, IsotropicPrior(1.0), noise, kl_scale=0.25)
    assert result.value == pytest.approx(result.data_fit - 0.25 * result.kl, abs=1e-12)
    assert result.kl > 0


def test_fixed_noise_gives_identical_results():
    spec, posterior, X, y, noise = problem(2, LeafKind.CONSTANT, 2)
    first = objective_gradient(posterior, X, y, spec, IsotropicPrior(1.0), noise)
    second = objective_gradient(posterior, X, y, spec, IsotropicPrior(1.0), noise)
    np.testing.assert_array_equal(first.gradient, second.gradient)


def test_empty_batch_rejected():
    spec, posterior, X, y, noise = problem(1, LeafKind.CONSTANT, 0)
    with pytest.raises(InvalidArgumentError):
        objective_gradient(posterior, X[:0], y[:0], spec, IsotropicPrior(1.0), noise)


def test_noise_shape_mismatch_rejected():
    spec, posterior, X, y, _ = problem(1, LeafKind.CONSTANT, 2)
    bad = PosteriorNoise(noise_std=np.zeros((2, posterior.p)), noise_lowrank=np.zeros((2, 1)))
    with pytest.raises(InvalidArgumentError):
        objective_gradient(posterior, X, y, spec, IsotropicPrior(1.0), bad)


def test_adam_first_step():
    state, params = adam_step(AdamState.fresh(1, 0.001), np.zeros(1), np.array([0.3]))
    assert state.step == 1
    assert params[0] == pytest.approx(-0.001 * 0.3 / (0.3 + 1e-8), rel=1e-12)


def test_adam_moves_against_the_gradient():
    state = AdamState.fresh(2, 0.01)
    params = np.array([1.0, -1.0])
    for _ in range(200):
        state, params = adam_step(state, params, 2 * params)
    assert np.all(np.abs(params) < 0.5)


def test_adam_rejects_length_mismatch():
    with pytest.raises(InvalidArgumentError):
        adam_step(AdamState.fresh(2), np.zeros(2), np.zeros(3))
