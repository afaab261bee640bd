"""
Dataset ingestion, preprocessing, splits and synthetic generators

Synthetic generators (x ~ U[-1, 1] unless stated, eps ~ N(0, noise_std^2)):
    step:             y = 1[x > 0] + eps
    gap_blobs:        x ~ U([-2, -0.5] U [0.5, 2]), y = sin(1.5 x) + eps
    tail_line:        y = x + 0.3 sin(4 x) + eps
    linear:           y = 2 x + 1 + eps
    friedman:         x ~ U[0, 1]^5,
                      y = 10 sin(pi x0 x1) + 20 (x2 - 0.5)^2 + 10 x3 + 5 x4 + eps
    gaussian:         x ~ N(0, I_4), y = sum_j sin(x_j) + eps
    gaussian_shifted: x ~ N(5 * 1, I_4), y = sum_j sin(x_j) + eps
"""
import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.datasets import make_friedman1
from sklearn.model_selection import KFold
from sklearn.model_selection import train_test_split as sk_train_test_split

from vstree.constants import (
    DEFAULT_TARGET_COLUMN,
    ERROR_EMPTY_DATA,
    ERROR_MALFORMED_TABLE,
    ERROR_MISSING_COLUMN,
    ERROR_UNKNOWN_NAME,
    ERROR_UNPARSEABLE_CELL,
    GAUSSIAN_DIM,
    GAUSSIAN_SHIFT,
    SYNTH_NAMES,
)
from vstree.errors import DataError, InvalidArgumentError
from vstree.seeding import derive_seed, stream

logger = logging.getLogger(__name__)


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    kind: ColumnKind
    source: str


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix (n, p), target (n,) and per-feature column metadata"""

    features: np.ndarray
    target: np.ndarray
    columns: Tuple[ColumnInfo, ...]
    target_name: str = DEFAULT_TARGET_COLUMN

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        target = np.asarray(self.target, dtype=np.float64)
        if features.ndim != 2 or target.shape != (features.shape[0],):
            raise InvalidArgumentError(f"Inconsistent dataset shapes {features.shape} / {target.shape}")
        if len(self.columns) != features.shape[1]:
            raise InvalidArgumentError(f"{len(self.columns)} column names for {features.shape[1]} features")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def feature_names(self) -> Tuple[str, ...]:
        return tuple(column.name for column in self.columns)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return replace(self, features=self.features[indices], target=self.target[indices])

    @classmethod
    def from_arrays(cls, X, y, names: Optional[Sequence[str]] = None) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if names is None:
            names = ["x"] if X.shape[1] == 1 else [f"x{j}" for j in range(X.shape[1])]
        columns = tuple(ColumnInfo(name, ColumnKind.NUMERIC, name) for name in names)
        return cls(features=X, target=y, columns=columns)


# ========================
# Ingestion
# ========================

def _parse_numeric(values: pd.Series, column: str) -> np.ndarray:
    parsed = pd.to_numeric(values.str.strip(), errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(parsed)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataError(ERROR_UNPARSEABLE_CELL.format(value=values.iloc[row], row=row + 1, column=column))
    return parsed


def _looks_categorical(values: pd.Series) -> bool:
    parsed = pd.to_numeric(values.str.strip(), errors="coerce")
    return bool(parsed.isna().all())


def _read_schema(schema_path) -> list:
    try:
        with open(schema_path, "r", encoding="utf-8") as handle:
            schema = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"Cannot read schema sidecar {schema_path}: {exc}") from exc
    return list(schema.get("categorical", []))


def load_table(
    path,
    target_column: str = DEFAULT_TARGET_COLUMN,
    categorical: Iterable[str] = (),
    schema_path=None,
) -> Dataset:
    """
    Load a comma-separated table with a header row

    Args:
        path: CSV file
        target_column: name of the regression target
        categorical: columns to one-hot encode
        schema_path: optional JSON sidecar {"categorical": [...]}

    Returns:
        Dataset with categorical columns one-hot expanded (sorted categories,
        encoded names `column=value`) and row order preserved
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as exc:
        raise DataError(f"File not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{ERROR_EMPTY_DATA}: {path}") from exc
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(ERROR_MALFORMED_TABLE.format(path=path, reason=exc)) from exc
    if frame.empty:
        raise DataError(f"{ERROR_EMPTY_DATA}: {path}")
    if target_column not in frame.columns:
        raise DataError(ERROR_MISSING_COLUMN.format(column=target_column, path=path))

    hinted = set(categorical)
    if schema_path is not None:
        hinted.update(_read_schema(schema_path))
    for name in hinted:
        if name not in frame.columns:
            raise DataError(ERROR_MISSING_COLUMN.format(column=name, path=path))
    if target_column in hinted:
        raise DataError(f"Target column '{target_column}' cannot be categorical")

    blocks, columns = [], []
    for name in frame.columns:
        if name == target_column:
            continue
        values = frame[name]
        if name in hinted or _looks_categorical(values):
            categories = sorted(values.str.strip().unique())
            encoded = pd.get_dummies(
                pd.Categorical(values.str.strip(), categories=categories), dtype=np.float64
            ).to_numpy()
            blocks.append(encoded)
            columns.extend(ColumnInfo(f"{name}={value}", ColumnKind.CATEGORICAL, name) for value in categories)
        else:
            blocks.append(_parse_numeric(values, name)[:, None])
            columns.append(ColumnInfo(name, ColumnKind.NUMERIC, name))

    target = _parse_numeric(frame[target_column], target_column)
    features = np.hstack(blocks) if blocks else np.zeros((len(frame), 0))
    logger.info(f"Loaded {path}: {features.shape[0]} rows, {features.shape[1]} features")
    return Dataset(features=features, target=target, columns=tuple(columns), target_name=target_column)


def save_table(dataset: Dataset, path) -> None:
    frame = pd.DataFrame(dataset.features, columns=list(dataset.feature_names))
    frame[dataset.target_name] = dataset.target
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)


# ========================
# Standardization
# ========================

@dataclass(frozen=True, eq=False)
class StandardizationStats:
    """Training-set means and population stds; constant columns get std 1"""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float
    constant_features: np.ndarray
    constant_target: bool = False

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray) -> "StandardizationStats":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.shape[0] == 0:
            raise InvalidArgumentError(ERROR_EMPTY_DATA)
        feature_mean = X.mean(axis=0)
        feature_std = X.std(axis=0)
        constant = feature_std == 0
        feature_std = np.where(constant, 1.0, feature_std)
        target_std = float(y.std())
        constant_target = target_std == 0
        if constant.any():
            logger.warning(f"{int(constant.sum())} constant feature column(s); std forced to 1")
        return cls(
            feature_mean=feature_mean,
            feature_std=feature_std,
            target_mean=float(y.mean()),
            target_std=1.0 if constant_target else target_std,
            constant_features=constant,
            constant_target=constant_target,
        )

    @classmethod
    def identity(cls, p: int) -> "StandardizationStats":
        return cls(
            feature_mean=np.zeros(p),
            feature_std=np.ones(p),
            target_mean=0.0,
            target_std=1.0,
            constant_features=np.zeros(p, dtype=bool),
        )

    @property
    def feature_dim(self) -> int:
        return self.feature_mean.shape[0]

    def transform_features(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_std

    def transform_target(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def inverse_features(self, X_std) -> np.ndarray:
        return np.asarray(X_std) * self.feature_std + self.feature_mean

    def inverse_target(self, y_std) -> np.ndarray:
        return np.asarray(y_std) * self.target_std + self.target_mean


def standardize(train: Dataset, apply_to: Dataset) -> Tuple[Dataset, StandardizationStats]:
    """Standardize `apply_to` with statistics computed on `train` only"""
    stats = StandardizationStats.fit(train.features, train.target)
    transformed = replace(
        apply_to,
        features=stats.transform_features(apply_to.features),
        target=stats.transform_target(apply_to.target),
    )
    return transformed, stats


# ========================
# Splits
# ========================

@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Either k-fold assignments (`folds[i]` = fold of row i) or a train mask"""

    folds: Optional[np.ndarray] = None
    train_mask: Optional[np.ndarray] = None

    @property
    def num_folds(self) -> int:
        return 0 if self.folds is None else int(self.folds.max()) + 1

    def fold(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """(train indices, test indices) for one fold"""
        if self.folds is None or not 0 <= index < self.num_folds:
            raise InvalidArgumentError(f"Fold {index} not available")
        return np.flatnonzero(self.folds != index), np.flatnonzero(self.folds == index)

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask)

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.train_mask)


def kfold(n: int, k: int, seed: int) -> SplitPlan:
    if k < 2 or k > n:
        raise InvalidArgumentError(f"k-fold needs 2 <= k <= n, got k={k}, n={n}")
    folds = np.empty(n, dtype=np.int64)
    splitter = KFold(n_splits=k, shuffle=True, random_state=derive_seed(seed, "split"))
    for fold_index, (_, test_index) in enumerate(splitter.split(np.arange(n))):
        folds[test_index] = fold_index
    return SplitPlan(folds=folds)


def train_test_split(n: int, fraction: float, seed: int) -> SplitPlan:
    if n < 2 or not 0 < fraction < 1:
        raise InvalidArgumentError(f"train_test_split needs n >= 2 and 0 < fraction < 1, got n={n}, fraction={fraction}")
    train_index, _ = sk_train_test_split(
        np.arange(n), train_size=fraction, random_state=derive_seed(seed, "split")
    )
    mask = np.zeros(n, dtype=bool)
    mask[train_index] = True
    return SplitPlan(train_mask=mask)


# ========================
# Synthetic generators
# ========================

def friedman_function(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return (
        10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20.0 * (X[:, 2] - 0.5) ** 2
        + 10.0 * X[:, 3]
        + 5.0 * X[:, 4]
    )


def synth(name: str, n: int, noise_std: float, seed: int) -> Dataset:
    if name not in SYNTH_NAMES:
        raise InvalidArgumentError(ERROR_UNKNOWN_NAME.format(what="generator", name=name, choices=SYNTH_NAMES))
    if n < 2:
        raise InvalidArgumentError(f"Synthetic datasets need n >= 2, got {n}")
    if noise_std < 0:
        raise InvalidArgumentError(f"noise_std must be >= 0, got {noise_std}")
    rng = stream(seed, f"synth-{name}")

    if name == "friedman":
        X, y = make_friedman1(
            n_samples=n, n_features=5, noise=noise_std, random_state=derive_seed(seed, "synth-friedman")
        )
        return Dataset.from_arrays(X, y)

    if name in ("gaussian", "gaussian_shifted"):
        shift = GAUSSIAN_SHIFT if name == "gaussian_shifted" else 0.0
        X = rng.standard_normal((n, GAUSSIAN_DIM)) + shift
        y = np.sin(X).sum(axis=1) + noise_std * rng.standard_normal(n)
        return Dataset.from_arrays(X, y)

    if name == "gap_blobs":
        side = rng.choice([-1.0, 1.0], size=n)
        x = side * rng.uniform(0.5, 2.0, size=n)
    else:
        x = rng.uniform(-1.0, 1.0, size=n)
    eps = noise_std * rng.standard_normal(n)

    if name == "step":
        y = (x > 0).astype(np.float64)
    elif name == "gap_blobs":
        y = np.sin(1.5 * x)
    elif name == "tail_line":
        y = x + 0.3 * np.sin(4.0 * x)
    else:
        y = 2.0 * x + 1.0
    return Dataset.from_arrays(x, y + eps)
