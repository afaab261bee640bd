"""
Fit a variational soft tree by maximizing the ELBO
"""
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from vstree.constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETA,
    DEFAULT_DEPTH,
    DEFAULT_LEAF_KIND,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MC_SAMPLES_TRAIN,
    DEFAULT_PRIOR_SCALE,
    DEFAULT_RANK,
    DEFAULT_SEED,
    DEFAULT_STEPS,
    DEFAULT_WEAK_LEARNER_NOISE_SCALE,
    ELBO_EVAL_SAMPLES,
    ERROR_CONSTANT_TARGET,
    ERROR_DIMENSION_MISMATCH,
    ERROR_DIVERGENCE,
    ERROR_EMPTY_DATA,
    ERROR_NON_FINITE,
    INIT_MEAN_STD,
    INIT_POSTERIOR_STD,
    LOG_EVERY,
)
from vstree.data import StandardizationStats
from vstree.errors import InvalidArgumentError, NumericError
from vstree.gradient_engine import AdamState, ObjectiveKind, PosteriorNoise, adam_step, objective_gradient
from vstree.lowrank_gaussian import IsotropicPrior, LowRankGaussian, inverse_softplus
from vstree.seeding import stream
from vstree.soft_tree import LeafKind, OutputMode, SoftTreeSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = DEFAULT_STEPS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    prior_scale: float = DEFAULT_PRIOR_SCALE
    beta: float = DEFAULT_BETA
    depth: int = DEFAULT_DEPTH
    rank: int = DEFAULT_RANK
    mc_samples_train: int = DEFAULT_MC_SAMPLES_TRAIN
    seed: int = DEFAULT_SEED
    leaf_kind: LeafKind = LeafKind(DEFAULT_LEAF_KIND)
    output_mode: OutputMode = OutputMode.DENSITY
    noise_scale: float = DEFAULT_WEAK_LEARNER_NOISE_SCALE
    allow_constant_target: bool = False

    def __post_init__(self):
        object.__setattr__(self, "leaf_kind", LeafKind(self.leaf_kind))
        object.__setattr__(self, "output_mode", OutputMode(self.output_mode))
        for name in ("steps", "batch_size", "depth", "mc_samples_train"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer, got {value}")
        if int(self.rank) != self.rank or self.rank < 0:
            raise InvalidArgumentError(f"rank must be a non-negative integer, got {self.rank}")
        for name in ("learning_rate", "prior_scale", "beta", "noise_scale"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgumentError(f"{name} must be positive, got {value}")

    def tree_spec(self, feature_dim: int) -> SoftTreeSpec:
        return SoftTreeSpec(
            depth=self.depth,
            feature_dim=feature_dim,
            leaf_kind=self.leaf_kind,
            beta=self.beta,
            output_mode=self.output_mode,
        )

    @property
    def objective_kind(self) -> ObjectiveKind:
        if self.output_mode is OutputMode.MEAN_ONLY:
            return ObjectiveKind.BOOSTED_RESIDUAL
        return ObjectiveKind.ELBO

    def to_dict(self) -> dict:
        values = asdict(self)
        values["leaf_kind"] = self.leaf_kind.value
        values["output_mode"] = self.output_mode.value
        return values


@dataclass(frozen=True)
class TrainingLogEntry:
    step: int
    elbo: float
    data_fit: float
    kl: float


@dataclass(frozen=True, eq=False)
class VstModel:
    """A trained variational soft tree together with its data transform"""

    spec: SoftTreeSpec
    posterior: LowRankGaussian
    prior: IsotropicPrior
    standardization: StandardizationStats
    config: TrainConfig
    training_log: Tuple[TrainingLogEntry, ...] = field(default=())
    initial_elbo: Optional[float] = None
    final_elbo: Optional[float] = None

    def __post_init__(self):
        if self.posterior.p != self.spec.param_count:
            raise InvalidArgumentError(
                ERROR_DIMENSION_MISMATCH.format(
                    what="posterior dimension", expected=self.spec.param_count, got=self.posterior.p
                )
            )

    @property
    def feature_dim(self) -> int:
        return self.spec.feature_dim


def init_posterior(spec: SoftTreeSpec, config: TrainConfig, seed: int) -> LowRankGaussian:
    """Small random means, gating weights shrunk by 1/sqrt(p), std 1e-3, V = 0"""
    rng = stream(seed, "init")
    p = spec.param_count
    mean = INIT_MEAN_STD * rng.standard_normal(p)
    gating = np.zeros(p, dtype=bool)
    nodes = spec.num_internal * (spec.feature_dim + 1)
    gating[:nodes] = (np.arange(nodes) % (spec.feature_dim + 1)) < spec.feature_dim
    mean[gating] /= math.sqrt(spec.feature_dim)
    rank = min(config.rank, p)
    return LowRankGaussian(
        mean=mean,
        diag_raw=np.full(p, inverse_softplus(INIT_POSTERIOR_STD)),
        factor=np.zeros((p, rank)),
    )


def validate_training_data(X: np.ndarray, y: np.ndarray):
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidArgumentError(ERROR_EMPTY_DATA)
    if y.shape != (X.shape[0],):
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="target length", expected=X.shape[0], got=y.shape)
        )
    if X.shape[0] < 2:
        raise InvalidArgumentError("At least two training rows are required")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidArgumentError(ERROR_NON_FINITE.format(what="training data"))


def evaluate_elbo(
    posterior: LowRankGaussian,
    X: np.ndarray,
    y: np.ndarray,
    spec: SoftTreeSpec,
    prior: IsotropicPrior,
    noise: PosteriorNoise,
    objective_kind: ObjectiveKind,
    noise_scale: float,
) -> float:
    return objective_gradient(posterior, X, y, spec, prior, noise, objective_kind, 1.0, noise_scale).value


def fit_standardized(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    init: Optional[LowRankGaussian] = None,
) -> Tuple[LowRankGaussian, Tuple[TrainingLogEntry, ...], float, float]:
    """
    Optimize the posterior on already-standardized data

    Returns:
        (posterior, training log, initial ELBO, final ELBO); both ELBO values
        use the same fixed evaluation noise
    """
    spec = config.tree_spec(X.shape[1])
    prior = IsotropicPrior.from_scale(config.prior_scale)
    posterior = init if init is not None else init_posterior(spec, config, config.seed)
    if posterior.p != spec.param_count:
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="warm-start posterior", expected=spec.param_count, got=posterior.p)
        )
    objective_kind = config.objective_kind
    n = X.shape[0]
    batch_size = min(config.batch_size, n)
    batches_per_epoch = math.ceil(n / batch_size)
    kl_scale = 1.0 / batches_per_epoch

    batch_rng = stream(config.seed, "batches")
    noise_rng = stream(config.seed, "noise")
    eval_noise = PosteriorNoise.draw(stream(config.seed, "eval"), ELBO_EVAL_SAMPLES, posterior.p, posterior.k)
    initial_elbo = evaluate_elbo(posterior, X, y, spec, prior, eval_noise, objective_kind, config.noise_scale)

    vector = posterior.to_vector()
    adam = AdamState.fresh(vector.shape[0], config.learning_rate)
    log = []
    order = np.empty(0, dtype=np.int64)
    cursor = 0
    for step in range(1, config.steps + 1):
        if cursor >= order.shape[0]:
            order = batch_rng.permutation(n)
            cursor = 0
        index = order[cursor:cursor + batch_size]
        cursor += batch_size

        noise = PosteriorNoise.draw(noise_rng, config.mc_samples_train, posterior.p, posterior.k)
        try:
            result = objective_gradient(
                posterior, X[index], y[index], spec, prior, noise, objective_kind, kl_scale, config.noise_scale
            )
        except NumericError as exc:
            raise NumericError(f"{ERROR_DIVERGENCE.format(step=step)}: {exc}") from exc

        adam, vector = adam_step(adam, vector, -result.gradient)
        if not np.all(np.isfinite(vector)):
            raise NumericError(ERROR_DIVERGENCE.format(step=step))
        posterior = LowRankGaussian.from_vector(vector, posterior.p, posterior.k)

        if step % LOG_EVERY == 0 or step == config.steps:
            log.append(TrainingLogEntry(step=step, elbo=result.value, data_fit=result.data_fit, kl=result.kl))
            logger.info(
                f"step {step}: elbo={result.value:.4f} data_fit={result.data_fit:.4f} kl={result.kl:.4f}"
            )

    final_elbo = evaluate_elbo(posterior, X, y, spec, prior, eval_noise, objective_kind, config.noise_scale)
    logger.info(f"Trained depth-{spec.depth} {spec.leaf_kind.value} tree: ELBO {initial_elbo:.3f} -> {final_elbo:.3f}")
    return posterior, tuple(log), initial_elbo, final_elbo


def fit_vst(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    init: Optional[LowRankGaussian] = None,
) -> VstModel:
    """
    Standardize (X, y) with their own statistics and fit a VST

    Args:
        X: features (n, p), n >= 2
        y: targets (n,)
        config: training hyperparameters
        init: optional warm-start posterior of matching dimension

    Returns:
        VstModel recording the standardization it was trained under
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    validate_training_data(X, y)
    stats = StandardizationStats.fit(X, y)
    if stats.constant_target and not config.allow_constant_target:
        raise InvalidArgumentError(ERROR_CONSTANT_TARGET)

    posterior, log, initial_elbo, final_elbo = fit_standardized(
        stats.transform_features(X), stats.transform_target(y), config, init
    )
    return VstModel(
        spec=config.tree_spec(X.shape[1]),
        posterior=posterior,
        prior=IsotropicPrior.from_scale(config.prior_scale),
        standardization=stats,
        config=config,
        training_log=log,
        initial_elbo=initial_elbo,
        final_elbo=final_elbo,
    )


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=int(seed))
