"""
Low-rank Gaussian variational family

q(theta) = N(mean, diag[sigma^2] + V V^T) with sigma = softplus(diag_raw).
The numpy functions are the public, validated entry points; the `*_tensor`
variants carry the same math on float64 torch tensors so the gradient
engine can differentiate through them.
"""
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import torch
from scipy.special import expit

from vstree.constants import ERROR_DIMENSION_MISMATCH, ERROR_NON_FINITE
from vstree.errors import InvalidArgumentError, NumericError

DTYPE = torch.float64


# ========================
# Activations
# ========================

def sigmoid(x):
    """Logistic function, overflow-safe"""
    return expit(x)


def softplus(x):
    """log(1 + exp(x)) evaluated without overflow"""
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    """Inverse of softplus, defined for y > 0"""
    y = np.asarray(y, dtype=np.float64)
    if np.any(~(y > 0)):
        raise InvalidArgumentError("inverse_softplus is only defined for positive inputs")
    out = y + np.log(-np.expm1(-y))
    return out if out.ndim else float(out)


def softplus_tensor(x: torch.Tensor) -> torch.Tensor:
    return torch.logaddexp(x, torch.zeros_like(x))


# ========================
# Distribution types
# ========================

@dataclass(frozen=True)
class IsotropicPrior:
    """Zero-centred spherical Gaussian prior N(0, variance * I)"""

    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise InvalidArgumentError(f"Prior variance must be positive, got {self.variance}")

    @classmethod
    def from_scale(cls, scale: float) -> "IsotropicPrior":
        return cls(variance=float(scale) ** 2)


def _frozen_array(values, ndim: int, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what=f"{name} ndim", expected=ndim, got=array.ndim)
        )
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class LowRankGaussian:
    """Gaussian with covariance diag[softplus(diag_raw)^2] + factor factor^T"""

    mean: np.ndarray
    diag_raw: np.ndarray
    factor: np.ndarray = field(default=None)

    def __post_init__(self):
        mean = _frozen_array(self.mean, 1, "mean")
        diag_raw = _frozen_array(self.diag_raw, 1, "diag_raw")
        factor = self.factor
        if factor is None:
            factor = np.zeros((mean.shape[0], 0))
        factor = _frozen_array(factor, 2, "factor")
        if diag_raw.shape != mean.shape:
            raise InvalidArgumentError(
                ERROR_DIMENSION_MISMATCH.format(what="diag_raw length", expected=mean.shape[0], got=diag_raw.shape[0])
            )
        if factor.shape[0] != mean.shape[0]:
            raise InvalidArgumentError(
                ERROR_DIMENSION_MISMATCH.format(what="factor rows", expected=mean.shape[0], got=factor.shape[0])
            )
        if factor.shape[1] > mean.shape[0]:
            raise InvalidArgumentError(f"Rank {factor.shape[1]} exceeds dimension {mean.shape[0]}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "diag_raw", diag_raw)
        object.__setattr__(self, "factor", factor)

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    @property
    def k(self) -> int:
        return self.factor.shape[1]

    @property
    def std(self) -> np.ndarray:
        return softplus(self.diag_raw)

    @property
    def num_parameters(self) -> int:
        return self.p * (2 + self.k)

    def covariance(self) -> np.ndarray:
        """Dense p x p covariance; only meant for small p"""
        return np.diag(self.std**2) + self.factor @ self.factor.T

    def to_vector(self) -> np.ndarray:
        """Flatten as [mean, diag_raw, factor (row-major)]"""
        return np.concatenate([self.mean, self.diag_raw, self.factor.ravel()])

    @classmethod
    def from_vector(cls, vector: np.ndarray, p: int, k: int) -> "LowRankGaussian":
        vector = np.asarray(vector, dtype=np.float64)
        expected = p * (2 + k)
        if vector.shape != (expected,):
            raise InvalidArgumentError(
                ERROR_DIMENSION_MISMATCH.format(what="posterior vector length", expected=expected, got=vector.shape)
            )
        return cls(
            mean=vector[:p],
            diag_raw=vector[p:2 * p],
            factor=vector[2 * p:].reshape(p, k),
        )

    def tensors(self, requires_grad: bool = False) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(mean, diag_raw, factor) as fresh float64 leaf tensors"""
        return tuple(
            torch.tensor(np.array(array), dtype=DTYPE, requires_grad=requires_grad)
            for array in (self.mean, self.diag_raw, self.factor)
        )


# ========================
# Tensor math
# ========================

def sample_tensor(mean, diag_raw, factor, noise_std, noise_lowrank) -> torch.Tensor:
    """mean + softplus(diag_raw) * eps_1 + V eps_2, batched over leading noise dims"""
    return mean + softplus_tensor(diag_raw) * noise_std + noise_lowrank @ factor.T


def log_det_capacitance_tensor(diag_raw, factor) -> torch.Tensor:
    """log det(I_k + V^T diag[sigma^2]^-1 V) through a Cholesky factor"""
    k = factor.shape[1]
    if k == 0:
        return torch.zeros((), dtype=factor.dtype)
    variance = softplus_tensor(diag_raw) ** 2
    capacitance = torch.eye(k, dtype=factor.dtype) + factor.T @ (factor / variance[:, None])
    try:
        chol = torch.linalg.cholesky(capacitance)
    except torch.linalg.LinAlgError as exc:
        raise NumericError(f"Capacitance matrix is not positive definite: {exc}") from exc
    return 2.0 * torch.log(torch.diagonal(chol)).sum()


def kl_to_isotropic_tensor(mean, diag_raw, factor, prior_variance: float) -> torch.Tensor:
    p = mean.shape[0]
    gamma = float(prior_variance)
    variance = softplus_tensor(diag_raw) ** 2
    total = (
        (variance / gamma - torch.log(variance)).sum()
        + (factor**2).sum() / gamma
        - log_det_capacitance_tensor(diag_raw, factor)
        + (mean**2).sum() / gamma
        + p * (np.log(gamma) - 1.0)
    )
    return 0.5 * total


# ========================
# Public operations
# ========================

def _check_finite(dist: LowRankGaussian):
    for name in ("mean", "diag_raw", "factor"):
        if not np.all(np.isfinite(getattr(dist, name))):
            raise NumericError(ERROR_NON_FINITE.format(what=f"posterior {name}"))


def sample(dist: LowRankGaussian, noise_std, noise_lowrank) -> np.ndarray:
    """Reparameterized draw from caller-supplied standard-normal noise"""
    noise_std = np.asarray(noise_std, dtype=np.float64)
    noise_lowrank = np.asarray(noise_lowrank, dtype=np.float64)
    if noise_std.shape != (dist.p,):
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="noise_std shape", expected=(dist.p,), got=noise_std.shape)
        )
    if noise_lowrank.shape != (dist.k,):
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="noise_lowrank shape", expected=(dist.k,), got=noise_lowrank.shape)
        )
    return dist.mean + dist.std * noise_std + dist.factor @ noise_lowrank


def log_det_capacitance(dist: LowRankGaussian) -> float:
    if dist.k == 0:
        return 0.0
    _check_finite(dist)
    _, diag_raw, factor = dist.tensors()
    with torch.no_grad():
        return float(log_det_capacitance_tensor(diag_raw, factor))


def kl_to_isotropic(dist: LowRankGaussian, prior: IsotropicPrior) -> float:
    """Closed-form KL(q || N(0, variance I))"""
    _check_finite(dist)
    mean, diag_raw, factor = dist.tensors()
    with torch.no_grad():
        value = float(kl_to_isotropic_tensor(mean, diag_raw, factor, prior.variance))
    if not np.isfinite(value):
        raise NumericError(ERROR_NON_FINITE.format(what="KL divergence"))
    # rounding can leave -1e-16 when q == prior
    return max(value, 0.0)
