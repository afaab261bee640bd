"""
Out-of-distribution detection with epistemic uncertainty as the score
"""
import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy.stats import rankdata

from vstree.constants import DEFAULT_FOLDS, EVAL_SAMPLES
from vstree.data import kfold
from vstree.errors import InvalidArgumentError
from vstree.predictive import Model, check_features, epistemic_uncertainty

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OodReport:
    auroc: float
    best_threshold: float
    threshold_accuracy: float
    id_scores: np.ndarray
    ood_scores: np.ndarray

    def score_table(self) -> np.ndarray:
        """Two columns: score, is_ood"""
        scores = np.concatenate([self.id_scores, self.ood_scores])
        labels = np.concatenate([np.zeros(self.id_scores.shape[0]), np.ones(self.ood_scores.shape[0])])
        return np.column_stack([scores, labels])


def _scores(values, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.shape[0] == 0:
        raise InvalidArgumentError(f"{what} scores must be non-empty")
    return values


def auroc(id_scores, ood_scores) -> float:
    """P(ood > id) + 0.5 P(tie), via midranks"""
    id_scores = _scores(id_scores, "ID")
    ood_scores = _scores(ood_scores, "OOD")
    n_id, n_ood = id_scores.shape[0], ood_scores.shape[0]
    ranks = rankdata(np.concatenate([id_scores, ood_scores]))
    u_statistic = ranks[n_id:].sum() - n_ood * (n_ood + 1) / 2.0
    return float(u_statistic / (n_id * n_ood))


def best_threshold(id_scores, ood_scores) -> Tuple[float, float]:
    """
    Single split "score > threshold means OOD" maximizing balanced accuracy

    Candidates are midpoints between adjacent sorted unique scores; the
    first (smallest) best candidate wins.
    """
    id_scores = _scores(id_scores, "ID")
    ood_scores = _scores(ood_scores, "OOD")
    unique = np.unique(np.concatenate([id_scores, ood_scores]))
    if unique.shape[0] == 1:
        return float(unique[0]), 0.5

    candidates = 0.5 * (unique[:-1] + unique[1:])
    id_correct = (id_scores[None, :] <= candidates[:, None]).mean(axis=1)
    ood_correct = (ood_scores[None, :] > candidates[:, None]).mean(axis=1)
    balanced = 0.5 * (id_correct + ood_correct)
    best = int(np.argmax(balanced))
    return float(candidates[best]), float(balanced[best])


def ood_report(model: Model, id_X, ood_X, S: int = EVAL_SAMPLES, seed: int = 0) -> OodReport:
    """Score both sets by epistemic uncertainty and summarize separability"""
    id_X = check_features(model, id_X)
    ood_X = check_features(model, ood_X)
    id_scores = np.atleast_1d(epistemic_uncertainty(model, id_X, S, seed))
    ood_scores = np.atleast_1d(epistemic_uncertainty(model, ood_X, S, seed))
    threshold, accuracy = best_threshold(id_scores, ood_scores)
    report = OodReport(
        auroc=auroc(id_scores, ood_scores),
        best_threshold=threshold,
        threshold_accuracy=accuracy,
        id_scores=id_scores,
        ood_scores=ood_scores,
    )
    logger.info(f"OOD report: auroc={report.auroc:.4f} threshold={threshold:.4g} accuracy={accuracy:.4f}")
    return report


@dataclass(frozen=True)
class OodCrossValidation:
    """One OOD report per fold; fold i's model never saw fold i's ID rows"""

    reports: Tuple[OodReport, ...]

    def mean_std(self, name: str = "auroc") -> Tuple[float, float]:
        values = np.array([getattr(report, name) for report in self.reports])
        return float(values.mean()), float(values.std())

    def score_table(self) -> np.ndarray:
        """Three columns: fold, score, is_ood"""
        tables = [
            np.column_stack([np.full(report.score_table().shape[0], fold), report.score_table()])
            for fold, report in enumerate(self.reports)
        ]
        return np.vstack(tables)


def ood_cross_validate(
    id_X,
    id_y,
    ood_X,
    fit_fn: Callable[[np.ndarray, np.ndarray, int], Model],
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    S: int = EVAL_SAMPLES,
) -> OodCrossValidation:
    """
    k-fold over the ID rows: fit on k-1 folds, then score the held-out ID
    fold against the full OOD set

    Args:
        fit_fn: called as fit_fn(X_train, y_train, fold_index) -> model
    """
    id_X = np.asarray(id_X, dtype=np.float64)
    id_y = np.asarray(id_y, dtype=np.float64)
    plan = kfold(id_X.shape[0], folds, seed)

    reports = []
    for fold in range(plan.num_folds):
        fit_index, held_out = plan.fold(fold)
        model = fit_fn(id_X[fit_index], id_y[fit_index], fold)
        reports.append(ood_report(model, id_X[held_out], ood_X, S, seed))
    result = OodCrossValidation(reports=tuple(reports))
    mean, std = result.mean_std("auroc")
    logger.info(f"OOD over {plan.num_folds} folds: auroc={mean:.4f} +- {std:.4f}")
    return result
