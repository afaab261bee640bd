import numpy as np
import pytest

from vstree.data import StandardizationStats
from vstree.lowrank_gaussian import IsotropicPrior, LowRankGaussian, inverse_softplus
from vstree.soft_tree import LeafKind, SoftTreeSpec
from vstree.vst_training import TrainConfig, VstModel

# softplus(-800) underflows to exactly 0: a point-mass posterior
POINT_MASS_RAW = -800.0


def _stats(feature_dim: int, target_mean: float, target_std: float) -> StandardizationStats:
    return StandardizationStats(
        feature_mean=np.zeros(feature_dim),
        feature_std=np.ones(feature_dim),
        target_mean=target_mean,
        target_std=target_std,
        constant_features=np.zeros(feature_dim, dtype=bool),
    )


@pytest.fixture
def constant_tree_model():
    """
    Depth-1 constant-leaf VST whose both leaves are N(leaf_mean, leaf_std^2)

    The posterior is a point mass unless `posterior_std` is given.
    """

    def build(
        leaf_mean: float = 0.0,
        leaf_std: float = 1.0,
        feature_dim: int = 1,
        posterior_std: float = None,
        rank: int = 0,
        target_mean: float = 0.0,
        target_std: float = 1.0,
        seed: int = 0,
    ) -> VstModel:
        spec = SoftTreeSpec(depth=1, feature_dim=feature_dim, leaf_kind=LeafKind.CONSTANT)
        rng = np.random.default_rng(seed)
        mean = np.concatenate(
            [
                0.5 * rng.standard_normal(feature_dim + 1),
                [leaf_mean, inverse_softplus(leaf_std), leaf_mean, inverse_softplus(leaf_std)],
            ]
        )
        diag_raw = np.full(spec.param_count, POINT_MASS_RAW if posterior_std is None else inverse_softplus(posterior_std))
        factor = 0.1 * rng.standard_normal((spec.param_count, rank))
        return VstModel(
            spec=spec,
            posterior=LowRankGaussian(mean=mean, diag_raw=diag_raw, factor=factor),
            prior=IsotropicPrior(variance=1.0),
            standardization=_stats(feature_dim, target_mean, target_std),
            config=TrainConfig(depth=1, leaf_kind="constant", rank=rank),
        )

    return build


@pytest.fixture
def random_linear_model():
    """Depth-2 linear-leaf VST with a spread-out random posterior"""

    def build(feature_dim: int = 2, rank: int = 2, seed: int = 0) -> VstModel:
        spec = SoftTreeSpec(depth=2, feature_dim=feature_dim, leaf_kind=LeafKind.LINEAR)
        rng = np.random.default_rng(seed)
        p = spec.param_count
        return VstModel(
            spec=spec,
            posterior=LowRankGaussian(
                mean=0.5 * rng.standard_normal(p),
                diag_raw=np.full(p, inverse_softplus(0.2)),
                factor=0.1 * rng.standard_normal((p, rank)),
            ),
            prior=IsotropicPrior(variance=1.0),
            standardization=_stats(feature_dim, 0.0, 1.0),
            config=TrainConfig(depth=2, rank=rank),
        )

    return build


@pytest.fixture
def tiny_train_config():
    return TrainConfig(steps=30, batch_size=32, learning_rate=1e-2, depth=2, rank=2, seed=3)
