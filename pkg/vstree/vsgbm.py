"""
Gradient-boosted variational soft trees (VSGBM)

Each tree outputs only a mean; the ensemble has homoskedastic Gaussian noise
whose variance gets a conjugate inverse-Gamma posterior:
    a_post = a_sigma + n,  b_post = b_sigma + r^T r
(the update as the boosting procedure states it, not the textbook n/2, r^T r/2).
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np
import torch
from scipy.stats import invgamma

from vstree.constants import (
    DEFAULT_A_SIGMA,
    DEFAULT_B_SIGMA,
    DEFAULT_NUM_TREES,
    DEFAULT_SHRINKAGE,
    DEFAULT_WEAK_LEARNER_NOISE_SCALE,
    ERROR_CONSTANT_TARGET,
    ERROR_DIMENSION_MISMATCH,
)
from vstree.data import StandardizationStats
from vstree.errors import InvalidArgumentError, VstreeError
from vstree.gradient_engine import PosteriorNoise
from vstree.lowrank_gaussian import DTYPE, IsotropicPrior, sample_tensor
from vstree.seeding import derive_seed, stream
from vstree.soft_tree import OutputMode, predict_mean_tensor
from vstree.vst_training import TrainConfig, VstModel, fit_standardized, validate_training_data

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VsgbmConfig:
    num_trees: int = DEFAULT_NUM_TREES
    a_sigma: float = DEFAULT_A_SIGMA
    b_sigma: float = DEFAULT_B_SIGMA
    tree: TrainConfig = field(default_factory=TrainConfig)
    weak_learner_noise_scale: float = DEFAULT_WEAK_LEARNER_NOISE_SCALE
    shrinkage: float = DEFAULT_SHRINKAGE

    def __post_init__(self):
        if int(self.num_trees) != self.num_trees or self.num_trees < 1:
            raise InvalidArgumentError(f"num_trees must be an integer >= 1, got {self.num_trees}")
        if not self.a_sigma > 1:
            raise InvalidArgumentError(f"a_sigma must exceed 1 for a finite prior mean, got {self.a_sigma}")
        for name in ("b_sigma", "weak_learner_noise_scale", "shrinkage"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be positive, got {value}")

    def tree_config(self, index: int) -> TrainConfig:
        """Per-tree config: mean-only output; tree 0 keeps the base seed"""
        seed = self.tree.seed if index == 0 else derive_seed(self.tree.seed, f"tree-{index}")
        return replace(
            self.tree,
            output_mode=OutputMode.MEAN_ONLY,
            noise_scale=self.weak_learner_noise_scale,
            seed=seed,
        )


@dataclass(frozen=True)
class InverseGammaPosterior:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise InvalidArgumentError(f"Inverse-Gamma parameters must be positive, got ({self.shape}, {self.scale})")

    @property
    def mean(self) -> float:
        if self.shape <= 1:
            raise InvalidArgumentError("Inverse-Gamma mean is undefined for shape <= 1")
        return self.scale / (self.shape - 1.0)


@dataclass(frozen=True, eq=False)
class VsgbmModel:
    trees: Tuple[VstModel, ...]
    noise_posterior: InverseGammaPosterior
    standardization: StandardizationStats
    config: VsgbmConfig
    residuals: np.ndarray

    def __post_init__(self):
        if not self.trees:
            raise InvalidArgumentError("A VSGBM needs at least one tree")
        dims = {tree.feature_dim for tree in self.trees}
        if dims != {self.standardization.feature_dim}:
            raise InvalidArgumentError(f"Trees disagree on feature_dim: {sorted(dims)}")
        object.__setattr__(self, "trees", tuple(self.trees))

    @property
    def feature_dim(self) -> int:
        return self.standardization.feature_dim


def sample_noise_variance(post: InverseGammaPosterior, uniform) -> np.ndarray:
    """Inverse-CDF draw(s) of sigma^2 ~ 1 / Gamma(shape, rate=scale)"""
    uniform = np.asarray(uniform, dtype=np.float64)
    if np.any((uniform <= 0) | (uniform >= 1)):
        raise InvalidArgumentError("Uniform draws must lie in (0, 1)")
    draws = invgamma.ppf(uniform, a=post.shape, scale=post.scale)
    return draws if draws.ndim else float(draws)


def conjugate_noise_posterior(a_sigma: float, b_sigma: float, residuals: np.ndarray) -> InverseGammaPosterior:
    residuals = np.asarray(residuals, dtype=np.float64)
    return InverseGammaPosterior(
        shape=a_sigma + residuals.shape[0],
        scale=b_sigma + float(residuals @ residuals),
    )


def tree_noise(tree: VstModel, rng: np.random.Generator, num_samples: int = 1) -> PosteriorNoise:
    return PosteriorNoise.draw(rng, num_samples, tree.posterior.p, tree.posterior.k)


def tree_means(trees: Sequence[VstModel], X_std: np.ndarray, noises: Sequence[PosteriorNoise]) -> np.ndarray:
    """Per-tree mean predictions (T, S, n) on standardized inputs under fixed draws"""
    X = torch.tensor(X_std, dtype=DTYPE)
    outputs = []
    with torch.no_grad():
        for tree, noise in zip(trees, noises):
            mean, diag_raw, factor = tree.posterior.tensors()
            theta = sample_tensor(
                mean,
                diag_raw,
                factor,
                torch.tensor(noise.noise_std, dtype=DTYPE),
                torch.tensor(noise.noise_lowrank, dtype=DTYPE),
            )
            outputs.append(predict_mean_tensor(tree.spec, theta, X).numpy())
    return np.stack(outputs)


def ensemble_mean(trees: Sequence[VstModel], X_std: np.ndarray, noises: Sequence[PosteriorNoise], shrinkage: float) -> np.ndarray:
    """F(x) = shrinkage * sum_t f_t(x), shape (S, n), standardized units"""
    return shrinkage * tree_means(trees, X_std, noises).sum(axis=0)


def fit_vsgbm(X: np.ndarray, y: np.ndarray, config: VsgbmConfig) -> VsgbmModel:
    """
    Fit trees one at a time to residuals under fresh joint posterior draws

    Args:
        X: features (n, p)
        y: targets (n,)
        config: boosting and per-tree hyperparameters

    Returns:
        VsgbmModel with T trees and the conjugate noise posterior
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    validate_training_data(X, y)
    stats = StandardizationStats.fit(X, y)
    if stats.constant_target and not config.tree.allow_constant_target:
        raise InvalidArgumentError(ERROR_CONSTANT_TARGET)
    X_std = stats.transform_features(X)
    y_std = stats.transform_target(y)
    seed = config.tree.seed

    trees: List[VstModel] = []
    for index in range(config.num_trees):
        tree_config = config.tree_config(index)
        if trees:
            rng = stream(seed, f"residual-round-{index}")
            noises = [tree_noise(tree, rng) for tree in trees]
            target = y_std - ensemble_mean(trees, X_std, noises, config.shrinkage)[0]
        else:
            target = y_std
        try:
            posterior, log, initial_elbo, final_elbo = fit_standardized(X_std, target, tree_config)
        except VstreeError as exc:
            raise type(exc)(f"tree {index}: {exc}") from exc
        trees.append(
            VstModel(
                spec=tree_config.tree_spec(X.shape[1]),
                posterior=posterior,
                prior=IsotropicPrior.from_scale(tree_config.prior_scale),
                standardization=stats,
                config=tree_config,
                training_log=log,
                initial_elbo=initial_elbo,
                final_elbo=final_elbo,
            )
        )
        logger.info(
            f"Boosting round {index + 1}/{config.num_trees} done: fitted residual norm {float(np.linalg.norm(target)):.4f}"
        )

    rng = stream(seed, "residual-final")
    noises = [tree_noise(tree, rng) for tree in trees]
    residuals = y_std - ensemble_mean(trees, X_std, noises, config.shrinkage)[0]
    noise_posterior = conjugate_noise_posterior(config.a_sigma, config.b_sigma, residuals)
    logger.info(
        f"VSGBM fitted: {len(trees)} trees, final residual norm {float(np.linalg.norm(residuals)):.4f}, "
        f"noise posterior shape={noise_posterior.shape:.1f} scale={noise_posterior.scale:.4f}"
    )
    return VsgbmModel(
        trees=tuple(trees),
        noise_posterior=noise_posterior,
        standardization=stats,
        config=config,
        residuals=residuals,
    )


def vsgbm_function_sample(model: VsgbmModel, X: np.ndarray, seed: int) -> Tuple[np.ndarray, float]:
    """
    One joint posterior draw of the ensemble function

    Returns:
        (mean vector in original units, noise std in original units)
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_dim:
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="features", expected=f"(n, {model.feature_dim})", got=X.shape)
        )
    rng = stream(seed, "posterior")
    noises = [tree_noise(tree, rng) for tree in model.trees]
    mean_std = ensemble_mean(model.trees, model.standardization.transform_features(X), noises, model.config.shrinkage)[0]
    sigma2 = sample_noise_variance(model.noise_posterior, stream(seed, "sigma").uniform())
    mean = model.standardization.inverse_target(mean_std)
    return mean, math.sqrt(sigma2) * model.standardization.target_std
