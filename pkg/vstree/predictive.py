"""
Monte Carlo predictive distribution, metrics and epistemic uncertainty

Works for both model kinds. All draws for one call come from the
`posterior` stream of the given seed (VSGBM noise variances from the `sigma`
stream), so two calls with the same seed see the same posterior samples.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Tuple, Union

import numpy as np
import torch
from scipy.special import logsumexp

from vstree.constants import DEFAULT_FOLDS, DEFAULT_TRAIN_FRACTION, ERROR_DIMENSION_MISMATCH, EVAL_SAMPLES
from vstree.data import kfold, train_test_split
from vstree.errors import InvalidArgumentError
from vstree.gradient_engine import PosteriorNoise
from vstree.lowrank_gaussian import DTYPE, sample_tensor
from vstree.seeding import stream
from vstree.soft_tree import (
    LOG_SQRT_2PI,
    OutputMode,
    log_likelihood_tensor,
    predict_mean_tensor,
    predict_moments_tensor,
)
from vstree.vsgbm import VsgbmModel, ensemble_mean, sample_noise_variance, tree_noise
from vstree.vst_training import VstModel

logger = logging.getLogger(__name__)

Model = Union[VstModel, VsgbmModel]

CHUNK_ROWS = 256


@dataclass(frozen=True, eq=False)
class PredictionDraws:
    """Per-draw predictive means and variances (S, n), standardized units"""

    means: np.ndarray
    variances: np.ndarray

    @property
    def num_samples(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class RegressionMetrics:
    mean_loglik: float
    rmse: float


@dataclass(frozen=True, eq=False)
class PredictiveSummary:
    predictive_mean: np.ndarray
    predictive_std: np.ndarray
    epistemic_std: np.ndarray
    sample_means: np.ndarray
    mean_loglik: float = math.nan
    rmse: float = math.nan


def check_features(model: Model, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.feature_dim:
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="feature columns", expected=model.feature_dim, got=X.shape[-1])
        )
    return X


def _vst_thetas(model: VstModel, S: int, seed: int) -> torch.Tensor:
    noise = PosteriorNoise.draw(stream(seed, "posterior"), S, model.posterior.p, model.posterior.k)
    mean, diag_raw, factor = model.posterior.tensors()
    return sample_tensor(
        mean,
        diag_raw,
        factor,
        torch.tensor(noise.noise_std, dtype=DTYPE),
        torch.tensor(noise.noise_lowrank, dtype=DTYPE),
    )


def _vsgbm_noises(model: VsgbmModel, S: int, seed: int) -> Tuple[List[PosteriorNoise], np.ndarray]:
    rng = stream(seed, "posterior")
    noises = [tree_noise(tree, rng, S) for tree in model.trees]
    sigma2 = sample_noise_variance(model.noise_posterior, stream(seed, "sigma").uniform(size=S))
    return noises, np.atleast_1d(sigma2)


def draw_predictions(model: Model, X, S: int, seed: int) -> PredictionDraws:
    """Predictive mean and variance of each of S posterior draws, rows in original units"""
    if S < 1:
        raise InvalidArgumentError(f"Need at least one posterior sample, got {S}")
    X_std = model.standardization.transform_features(check_features(model, X))
    means, variances = [], []
    if isinstance(model, VstModel):
        with torch.no_grad():
            theta = _vst_thetas(model, S, seed)
            for start in range(0, X_std.shape[0], CHUNK_ROWS):
                chunk = torch.tensor(X_std[start:start + CHUNK_ROWS], dtype=DTYPE)
                if model.spec.output_mode is OutputMode.DENSITY:
                    mean, variance = predict_moments_tensor(model.spec, theta, chunk)
                else:
                    mean = predict_mean_tensor(model.spec, theta, chunk)
                    variance = torch.full_like(mean, model.config.noise_scale**2)
                means.append(mean.numpy())
                variances.append(variance.numpy())
        return PredictionDraws(means=np.concatenate(means, axis=1), variances=np.concatenate(variances, axis=1))

    noises, sigma2 = _vsgbm_noises(model, S, seed)
    mean = ensemble_mean(model.trees, X_std, noises, model.config.shrinkage)
    return PredictionDraws(means=mean, variances=np.broadcast_to(sigma2[:, None], mean.shape).copy())


def _draw_log_density(model: Model, X, y, S: int, seed: int) -> np.ndarray:
    """log p(y_std | x, theta_s) of shape (S, n), standardized units"""
    y_std = model.standardization.transform_target(y)
    if isinstance(model, VstModel) and model.spec.output_mode is OutputMode.DENSITY:
        X_std = model.standardization.transform_features(check_features(model, X))
        blocks = []
        with torch.no_grad():
            theta = _vst_thetas(model, S, seed)
            for start in range(0, X_std.shape[0], CHUNK_ROWS):
                blocks.append(
                    log_likelihood_tensor(
                        model.spec,
                        theta,
                        torch.tensor(X_std[start:start + CHUNK_ROWS], dtype=DTYPE),
                        torch.tensor(y_std[start:start + CHUNK_ROWS], dtype=DTYPE),
                    ).numpy()
                )
        return np.concatenate(blocks, axis=1)
    draws = draw_predictions(model, X, S, seed)
    return -LOG_SQRT_2PI - 0.5 * np.log(draws.variances) - 0.5 * (y_std[None, :] - draws.means) ** 2 / draws.variances


def log_mean_exp(log_density: np.ndarray) -> np.ndarray:
    """log of the mean over axis 0 of exp(log_density): the Monte Carlo mixture over draws"""
    log_density = np.asarray(log_density, dtype=np.float64)
    return logsumexp(log_density, axis=0) - math.log(log_density.shape[0])


def predictive_loglik(model: Model, X, y, S: int = EVAL_SAMPLES, seed: int = 0):
    """
    log[(1/S) sum_s p(y | x, theta_s)] in original target units

    Accepts a single row (returns a float) or a matrix (returns one value
    per row).
    """
    single = np.asarray(X).ndim == 1
    X = check_features(model, X)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape != (X.shape[0],):
        raise InvalidArgumentError(ERROR_DIMENSION_MISMATCH.format(what="targets", expected=X.shape[0], got=y.shape))
    log_density = _draw_log_density(model, X, y, S, seed)
    values = log_mean_exp(log_density) - math.log(model.standardization.target_std)
    return float(values[0]) if single else values


def epistemic_uncertainty(model: Model, X, S: int = EVAL_SAMPLES, seed: int = 0):
    """Unbiased sample variance of the S per-draw predictive means (standardized units)"""
    if S < 2:
        raise InvalidArgumentError(f"Epistemic uncertainty needs S >= 2, got {S}")
    single = np.asarray(X).ndim == 1
    draws = draw_predictions(model, X, S, seed)
    variance = draws.means.var(axis=0, ddof=1)
    return float(variance[0]) if single else variance


def regression_metrics(model: Model, X, y, S: int = EVAL_SAMPLES, seed: int = 0, original_units: bool = False) -> RegressionMetrics:
    """
    Mean test log-likelihood and RMSE of the Monte Carlo predictive mean

    Standardized target units by default; `original_units` shifts the
    log-likelihood by -log(target_std) and scales the RMSE by target_std.
    """
    X = check_features(model, X)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise InvalidArgumentError("Cannot compute metrics on an empty dataset")
    target_std = model.standardization.target_std
    loglik_std = predictive_loglik(model, X, y, S, seed) + math.log(target_std)
    predicted = draw_predictions(model, X, S, seed).means.mean(axis=0)
    rmse_std = float(np.sqrt(np.mean((predicted - model.standardization.transform_target(y)) ** 2)))
    mean_loglik = float(np.mean(loglik_std))
    if original_units:
        return RegressionMetrics(mean_loglik=mean_loglik - math.log(target_std), rmse=rmse_std * target_std)
    return RegressionMetrics(mean_loglik=mean_loglik, rmse=rmse_std)


def summarize(model: Model, X, y=None, S: int = EVAL_SAMPLES, seed: int = 0) -> PredictiveSummary:
    """Per-row predictive moments plus dataset metrics when targets are given"""
    if S < 2:
        raise InvalidArgumentError(f"A predictive summary needs S >= 2, got {S}")
    X = check_features(model, X)
    draws = draw_predictions(model, X, S, seed)
    total_variance = draws.means.var(axis=0) + draws.variances.mean(axis=0)
    summary = dict(
        predictive_mean=draws.means.mean(axis=0),
        predictive_std=np.sqrt(total_variance),
        epistemic_std=np.sqrt(draws.means.var(axis=0, ddof=1)),
        sample_means=draws.means,
    )
    if y is not None:
        metrics = regression_metrics(model, X, y, S, seed)
        summary.update(mean_loglik=metrics.mean_loglik, rmse=metrics.rmse)
    return PredictiveSummary(**summary)


# ========================
# Cross-validation protocol
# ========================

@dataclass(frozen=True)
class FoldResult:
    fold: int
    validation: RegressionMetrics
    test: RegressionMetrics


@dataclass(frozen=True)
class CrossValidationReport:
    folds: Tuple[FoldResult, ...]

    def _values(self, split: str, name: str) -> np.ndarray:
        return np.array([getattr(getattr(fold, split), name) for fold in self.folds])

    def mean_std(self, split: str, name: str) -> Tuple[float, float]:
        values = self._values(split, name)
        return float(values.mean()), float(values.std())


def cross_validate(
    X,
    y,
    fit_fn: Callable[[np.ndarray, np.ndarray, int], Model],
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    S: int = EVAL_SAMPLES,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
) -> CrossValidationReport:
    """
    Hold out a test split, run k-fold CV on the rest and score every fold
    model on its validation fold and on the common test split

    Args:
        fit_fn: called as fit_fn(X_train, y_train, fold_index) -> model
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    split = train_test_split(X.shape[0], train_fraction, seed)
    X_train, y_train = X[split.train_indices], y[split.train_indices]
    X_test, y_test = X[split.test_indices], y[split.test_indices]
    plan = kfold(X_train.shape[0], folds, seed)

    results = []
    for fold in range(plan.num_folds):
        fit_index, val_index = plan.fold(fold)
        model = fit_fn(X_train[fit_index], y_train[fit_index], fold)
        validation = regression_metrics(model, X_train[val_index], y_train[val_index], S, seed)
        test = regression_metrics(model, X_test, y_test, S, seed)
        logger.info(f"fold {fold}: test loglik={test.mean_loglik:.4f} rmse={test.rmse:.4f}")
        results.append(FoldResult(fold=fold, validation=validation, test=test))
    return CrossValidationReport(folds=tuple(results))
