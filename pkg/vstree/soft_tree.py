"""
Soft decision tree function family

A complete binary tree of fixed depth. Internal node n routes an input right
with probability sigmoid(beta * (w_n^T x + b_n)); each leaf holds a Gaussian
whose mean and standard deviation are either constants or linear in x.

Flat parameter layout (FlatParams), in order:
    for each internal node in breadth-first order: w_n (p values), b_n
    for each leaf, left to right:
        constant leaf: mu_l, alpha_l
        linear leaf:   w_l (p values), b_l, w_hat_l (p values), b_hat_l
"""
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from vstree.constants import DEFAULT_BETA, ERROR_DIMENSION_MISMATCH, ERROR_NON_FINITE
from vstree.errors import InvalidArgumentError, NumericError
from vstree.lowrank_gaussian import DTYPE, softplus_tensor

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# A FlatParams value is a float64 vector of length param_count(spec), laid
# out as described in the module docstring.
FlatParams = np.ndarray


class LeafKind(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"


class OutputMode(str, Enum):
    DENSITY = "density"
    MEAN_ONLY = "mean_only"


@dataclass(frozen=True)
class SoftTreeSpec:
    """Topology and fixed hyperparameters of a soft tree"""

    depth: int
    feature_dim: int
    leaf_kind: LeafKind = LeafKind.LINEAR
    beta: float = DEFAULT_BETA
    output_mode: OutputMode = OutputMode.DENSITY

    def __post_init__(self):
        object.__setattr__(self, "leaf_kind", LeafKind(self.leaf_kind))
        object.__setattr__(self, "output_mode", OutputMode(self.output_mode))
        if int(self.depth) != self.depth or self.depth < 1:
            raise InvalidArgumentError(f"Tree depth must be an integer >= 1, got {self.depth}")
        if int(self.feature_dim) != self.feature_dim or self.feature_dim < 1:
            raise InvalidArgumentError(f"feature_dim must be an integer >= 1, got {self.feature_dim}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise InvalidArgumentError(f"beta must be positive, got {self.beta}")

    @property
    def num_internal(self) -> int:
        return 2**self.depth - 1

    @property
    def num_leaves(self) -> int:
        return 2**self.depth

    @property
    def leaf_param_size(self) -> int:
        if self.leaf_kind is LeafKind.CONSTANT:
            return 2
        return 2 * self.feature_dim + 2

    @property
    def param_count(self) -> int:
        return self.num_internal * (self.feature_dim + 1) + self.num_leaves * self.leaf_param_size


@dataclass(frozen=True)
class LeafDensity:
    mean: float
    std: float


@dataclass(frozen=True, eq=False)
class TreeParams:
    """
    Structured view of a FlatParams vector (numpy or torch, any leading batch dims)

    Constant leaves leave the weight fields as None: their mean is
    `leaf_mean_bias` and their std is softplus(`leaf_std_bias`).
    """

    node_weights: object
    node_bias: object
    leaf_mean_bias: object
    leaf_std_bias: object
    leaf_mean_weights: Optional[object] = None
    leaf_std_weights: Optional[object] = None


def param_count(spec: SoftTreeSpec) -> int:
    return spec.param_count


def unpack(spec: SoftTreeSpec, values) -> TreeParams:
    """Slice a (..., P) array or tensor into its structured view"""
    p, n_nodes, n_leaves = spec.feature_dim, spec.num_internal, spec.num_leaves
    if values.shape[-1] != spec.param_count:
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="FlatParams length", expected=spec.param_count, got=values.shape[-1])
        )
    batch = tuple(values.shape[:-1])
    split = n_nodes * (p + 1)
    nodes = values[..., :split].reshape(batch + (n_nodes, p + 1))
    leaves = values[..., split:].reshape(batch + (n_leaves, spec.leaf_param_size))

    if spec.leaf_kind is LeafKind.CONSTANT:
        return TreeParams(
            node_weights=nodes[..., :p],
            node_bias=nodes[..., p],
            leaf_mean_bias=leaves[..., 0],
            leaf_std_bias=leaves[..., 1],
        )
    return TreeParams(
        node_weights=nodes[..., :p],
        node_bias=nodes[..., p],
        leaf_mean_weights=leaves[..., :p],
        leaf_mean_bias=leaves[..., p],
        leaf_std_weights=leaves[..., p + 1:2 * p + 1],
        leaf_std_bias=leaves[..., 2 * p + 1],
    )


def pack(spec: SoftTreeSpec, params: TreeParams) -> FlatParams:
    """Inverse of `unpack` for a single (unbatched) numpy parameter set"""
    nodes = np.concatenate(
        [np.asarray(params.node_weights, dtype=np.float64), np.asarray(params.node_bias, dtype=np.float64)[:, None]],
        axis=1,
    )
    if spec.leaf_kind is LeafKind.CONSTANT:
        leaves = np.stack([params.leaf_mean_bias, params.leaf_std_bias], axis=1)
    else:
        leaves = np.concatenate(
            [
                params.leaf_mean_weights,
                np.asarray(params.leaf_mean_bias)[:, None],
                params.leaf_std_weights,
                np.asarray(params.leaf_std_bias)[:, None],
            ],
            axis=1,
        )
    values = np.concatenate([nodes.ravel(), np.asarray(leaves, dtype=np.float64).ravel()])
    if values.shape != (spec.param_count,):
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="packed length", expected=spec.param_count, got=values.shape[0])
        )
    return values


@lru_cache(maxsize=None)
def path_masks(depth: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    (right, left) masks of shape (leaves, internal nodes)

    right[l, n] = 1 when leaf l lies in the right subtree of node n,
    left[l, n] = 1 when it lies in the left subtree.
    """
    n_leaves, n_nodes = 2**depth, 2**depth - 1
    right = np.zeros((n_leaves, n_nodes))
    left = np.zeros((n_leaves, n_nodes))
    for leaf in range(n_leaves):
        for level in range(depth):
            node = 2**level - 1 + (leaf >> (depth - level))
            goes_right = (leaf >> (depth - level - 1)) & 1
            if goes_right:
                right[leaf, node] = 1.0
            else:
                left[leaf, node] = 1.0
    right.setflags(write=False)
    left.setflags(write=False)
    return right, left


# ========================
# Batched tensor evaluation: theta (S, P), X (n, p)
# ========================

def log_routing_tensor(spec: SoftTreeSpec, params: TreeParams, X: torch.Tensor) -> torch.Tensor:
    """log Pr(leaf | x) of shape (S, n, L), accumulated in log-space"""
    logits = spec.beta * (torch.einsum("np,sjp->snj", X, params.node_weights) + params.node_bias[:, None, :])
    right, left = path_masks(spec.depth)
    right = torch.tensor(np.array(right), dtype=X.dtype)
    left = torch.tensor(np.array(left), dtype=X.dtype)
    return F.logsigmoid(logits) @ right.T + F.logsigmoid(-logits) @ left.T


def leaf_moments_tensor(spec: SoftTreeSpec, params: TreeParams, X: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Leaf Gaussian means and stds, each of shape (S, n, L)"""
    n = X.shape[0]
    if spec.leaf_kind is LeafKind.CONSTANT:
        s, n_leaves = params.leaf_mean_bias.shape
        mean = params.leaf_mean_bias[:, None, :].expand(s, n, n_leaves)
        std = softplus_tensor(params.leaf_std_bias)[:, None, :].expand(s, n, n_leaves)
        return mean, std
    mean = torch.einsum("np,slp->snl", X, params.leaf_mean_weights) + params.leaf_mean_bias[:, None, :]
    std = softplus_tensor(
        torch.einsum("np,slp->snl", X, params.leaf_std_weights) + params.leaf_std_bias[:, None, :]
    )
    return mean, std


def gaussian_log_density(y, mean, std):
    return -LOG_SQRT_2PI - torch.log(std) - 0.5 * ((y - mean) / std) ** 2


def log_likelihood_tensor(spec: SoftTreeSpec, theta: torch.Tensor, X: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """log p(y | x, theta) for every draw and row, shape (S, n)"""
    params = unpack(spec, theta)
    log_route = log_routing_tensor(spec, params, X)
    mean, std = leaf_moments_tensor(spec, params, X)
    return torch.logsumexp(log_route + gaussian_log_density(y[None, :, None], mean, std), dim=-1)


def predict_mean_tensor(spec: SoftTreeSpec, theta: torch.Tensor, X: torch.Tensor) -> torch.Tensor:
    """Routing-weighted leaf means, shape (S, n)"""
    params = unpack(spec, theta)
    routing = torch.exp(log_routing_tensor(spec, params, X))
    mean, _ = leaf_moments_tensor(spec, params, X)
    return (routing * mean).sum(dim=-1)


def predict_moments_tensor(spec: SoftTreeSpec, theta: torch.Tensor, X: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Mean and variance of the leaf mixture, each (S, n)"""
    params = unpack(spec, theta)
    routing = torch.exp(log_routing_tensor(spec, params, X))
    mean, std = leaf_moments_tensor(spec, params, X)
    mixture_mean = (routing * mean).sum(dim=-1)
    second_moment = (routing * (std**2 + mean**2)).sum(dim=-1)
    return mixture_mean, torch.clamp(second_moment - mixture_mean**2, min=0.0)


# ========================
# Single-example public operations
# ========================

def _prepare(spec: SoftTreeSpec, params, x) -> Tuple[torch.Tensor, torch.Tensor]:
    params = np.asarray(params, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if params.shape != (spec.param_count,):
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="FlatParams length", expected=spec.param_count, got=params.shape)
        )
    if x.shape != (spec.feature_dim,):
        raise InvalidArgumentError(
            ERROR_DIMENSION_MISMATCH.format(what="feature vector shape", expected=(spec.feature_dim,), got=x.shape)
        )
    if not np.all(np.isfinite(x)):
        raise NumericError(ERROR_NON_FINITE.format(what="feature vector"))
    return torch.tensor(params, dtype=DTYPE)[None, :], torch.tensor(x, dtype=DTYPE)[None, :]


def routing_probs(spec: SoftTreeSpec, params: FlatParams, x) -> np.ndarray:
    theta, X = _prepare(spec, params, x)
    with torch.no_grad():
        log_route = log_routing_tensor(spec, unpack(spec, theta), X)
    return torch.exp(log_route)[0, 0].numpy()


def leaf_density(spec: SoftTreeSpec, params: FlatParams, leaf_index: int, x) -> LeafDensity:
    if not 0 <= leaf_index < spec.num_leaves:
        raise InvalidArgumentError(f"leaf_index {leaf_index} outside [0, {spec.num_leaves})")
    theta, X = _prepare(spec, params, x)
    with torch.no_grad():
        mean, std = leaf_moments_tensor(spec, unpack(spec, theta), X)
    return LeafDensity(mean=float(mean[0, 0, leaf_index]), std=float(std[0, 0, leaf_index]))


def log_likelihood(spec: SoftTreeSpec, params: FlatParams, x, y: float) -> float:
    theta, X = _prepare(spec, params, x)
    with torch.no_grad():
        value = log_likelihood_tensor(spec, theta, X, torch.tensor([float(y)], dtype=DTYPE))
    return float(value[0, 0])


def predict_mean(spec: SoftTreeSpec, params: FlatParams, x) -> float:
    theta, X = _prepare(spec, params, x)
    with torch.no_grad():
        return float(predict_mean_tensor(spec, theta, X)[0, 0])
