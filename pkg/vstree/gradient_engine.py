"""
ELBO gradients with respect to the variational parameters, and Adam

Gradients come from torch autograd over float64 tensors: the tape records
sample() -> FlatParams -> log_likelihood / predict_mean and the KL term, and
backpropagates to (mean, diag_raw, factor) of the posterior.
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Tuple

import numpy as np
import torch

from vstree.constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPSILON,
    DEFAULT_LEARNING_RATE,
    ERROR_DIMENSION_MISMATCH,
    ERROR_NON_FINITE,
)
from vstree.errors import InvalidArgumentError, NumericError
from vstree.lowrank_gaussian import (
    DTYPE,
    IsotropicPrior,
    LowRankGaussian,
    kl_to_isotropic_tensor,
    sample_tensor,
)
from vstree.soft_tree import (
    LOG_SQRT_2PI,
    SoftTreeSpec,
    log_likelihood_tensor,
    predict_mean_tensor,
)

logger = logging.getLogger(__name__)

POSTERIOR_BLOCKS = ("mean", "diag_raw", "factor")


class ObjectiveKind(str, Enum):
    ELBO = "elbo"
    BOOSTED_RESIDUAL = "boosted_residual"


@dataclass(frozen=True, eq=False)
class PosteriorNoise:
    """Standard-normal draws for m Monte Carlo samples: (m, p) and (m, k)"""

    noise_std: np.ndarray
    noise_lowrank: np.ndarray

    @property
    def num_samples(self) -> int:
        return self.noise_std.shape[0]

    @classmethod
    def draw(cls, rng: np.random.Generator, num_samples: int, p: int, k: int) -> "PosteriorNoise":
        return cls(
            noise_std=rng.standard_normal((num_samples, p)),
            noise_lowrank=rng.standard_normal((num_samples, k)),
        )


@dataclass(frozen=True, eq=False)
class ObjectiveValue:
    value: float
    data_fit: float
    kl: float
    gradient: np.ndarray


class GradientTape:
    """
    Records one objective evaluation and returns its exact gradient

    The posterior tensors are leaves of the autograd graph; `gradient()`
    backpropagates and flattens the result in the LowRankGaussian.to_vector
    order [mean, diag_raw, factor].
    """

    def __init__(self, posterior: LowRankGaussian):
        self.posterior = posterior
        self.mean, self.diag_raw, self.factor = posterior.tensors(requires_grad=True)

    def sample(self, noise: PosteriorNoise) -> torch.Tensor:
        return sample_tensor(
            self.mean,
            self.diag_raw,
            self.factor,
            torch.tensor(noise.noise_std, dtype=DTYPE),
            torch.tensor(noise.noise_lowrank, dtype=DTYPE),
        )

    def kl(self, prior: IsotropicPrior) -> torch.Tensor:
        return kl_to_isotropic_tensor(self.mean, self.diag_raw, self.factor, prior.variance)

    def gradient(self, objective: torch.Tensor) -> np.ndarray:
        leaves = (self.mean, self.diag_raw, self.factor)
        grads = torch.autograd.grad(objective, leaves, allow_unused=True)
        blocks = []
        for name, leaf, grad in zip(POSTERIOR_BLOCKS, leaves, grads):
            grad = torch.zeros_like(leaf) if grad is None else grad
            block = grad.detach().numpy().ravel()
            if not np.all(np.isfinite(block)):
                raise NumericError(ERROR_NON_FINITE.format(what=f"gradient block '{name}'"))
            blocks.append(block)
        return np.concatenate(blocks)


def _check_batch(spec: SoftTreeSpec, posterior: LowRankGaussian, X, y, noise: PosteriorNoise):
    if X.ndim != 2 or X.shape[1] != spec.feature_dim:
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="batch features", expected=f"(n, {spec.feature_dim})", got=X.shape)
        )
    if X.shape[0] == 0 or y.shape != (X.shape[0],):
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="batch targets", expected=(X.shape[0],), got=y.shape)
        )
    if posterior.p != spec.param_count:
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="posterior dimension", expected=spec.param_count, got=posterior.p)
        )
    if noise.num_samples < 1:
        raise InvalidArgumentError("At least one Monte Carlo sample is required")
    if noise.noise_std.shape[1] != posterior.p or noise.noise_lowrank.shape != (noise.num_samples, posterior.k):
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(
                what="noise shapes",
                expected=((noise.num_samples, posterior.p), (noise.num_samples, posterior.k)),
                got=(noise.noise_std.shape, noise.noise_lowrank.shape),
            )
        )


def data_fit_tensor(
    spec: SoftTreeSpec,
    theta: torch.Tensor,
    X: torch.Tensor,
    y: torch.Tensor,
    objective_kind: ObjectiveKind,
    noise_scale: float,
) -> torch.Tensor:
    """(1/m) sum_i sum_batch log p(y | x, theta_i)"""
    if objective_kind is ObjectiveKind.ELBO:
        log_lik = log_likelihood_tensor(spec, theta, X, y)
    else:
        residual = (y[None, :] - predict_mean_tensor(spec, theta, X)) / noise_scale
        log_lik = -LOG_SQRT_2PI - np.log(noise_scale) - 0.5 * residual**2
    return log_lik.sum(dim=1).mean()


def objective_gradient(
    posterior: LowRankGaussian,
    X: np.ndarray,
    y: np.ndarray,
    spec: SoftTreeSpec,
    prior: IsotropicPrior,
    noise: PosteriorNoise,
    objective_kind: ObjectiveKind = ObjectiveKind.ELBO,
    kl_scale: float = 1.0,
    noise_scale: float = 1.0,
) -> ObjectiveValue:
    """
    Monte Carlo ELBO on a batch and its gradient

    Args:
        posterior: current variational posterior over FlatParams
        X, y: batch features (n, p) and targets (n,)
        spec: tree topology
        prior: isotropic prior
        noise: fixed reparameterization draws, one row per MC sample
        objective_kind: ELBO uses the tree density; BOOSTED_RESIDUAL uses
            N(y; predict_mean, noise_scale^2)
        kl_scale: weight of the KL term (1 / minibatches per epoch)
        noise_scale: fixed likelihood std for BOOSTED_RESIDUAL

    Returns:
        ObjectiveValue with the objective, its two terms and the gradient
        over [mean, diag_raw, factor]
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_batch(spec, posterior, X, y, noise)
    objective_kind = ObjectiveKind(objective_kind)

    tape = GradientTape(posterior)
    theta = tape.sample(noise)
    data_fit = data_fit_tensor(
        spec, theta, torch.tensor(X, dtype=DTYPE), torch.tensor(y, dtype=DTYPE), objective_kind, noise_scale
    )
    kl = tape.kl(prior)
    objective = data_fit - kl_scale * kl
    if not torch.isfinite(data_fit):
        raise NumericError(ERROR_NON_FINITE.format(what="data-fit term"))
    if not torch.isfinite(kl):
        raise NumericError(ERROR_NON_FINITE.format(what="KL term"))

    return ObjectiveValue(
        value=float(objective.detach()),
        data_fit=float(data_fit.detach()),
        kl=float(kl.detach()),
        gradient=tape.gradient(objective),
    )


# ========================
# Adam
# ========================

@dataclass(frozen=True, eq=False)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def fresh(cls, size: int, learning_rate: float = DEFAULT_LEARNING_RATE) -> "AdamState":
        return cls(step=0, m=np.zeros(size), v=np.zeros(size), learning_rate=learning_rate)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> Tuple[AdamState, np.ndarray]:
    """Bias-corrected Adam update minimizing along `grad`"""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="Adam vector lengths", expected=state.m.shape, got=(params.shape, grad.shape))
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, step=step, m=m, v=v), new_params
