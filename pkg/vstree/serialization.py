"""
Model file: a versioned JSON document with flat float arrays

Python's float repr is the shortest string that parses back to the same
double, so load(save(model)) predicts bit-identically.
"""
import json
import logging
from pathlib import Path
from typing import Union

import numpy as np

from vstree.constants import ERROR_UNKNOWN_FORMAT, MODEL_FORMAT_VERSION
from vstree.data import StandardizationStats
from vstree.errors import DataError
from vstree.lowrank_gaussian import IsotropicPrior, LowRankGaussian
from vstree.soft_tree import SoftTreeSpec
from vstree.vsgbm import InverseGammaPosterior, VsgbmConfig, VsgbmModel
from vstree.vst_training import TrainConfig, VstModel

logger = logging.getLogger(__name__)

Model = Union[VstModel, VsgbmModel]


def _floats(values) -> list:
    return [float(value) for value in np.asarray(values, dtype=np.float64).ravel()]


def _standardization_to_dict(stats: StandardizationStats) -> dict:
    return {
        "feature_mean": _floats(stats.feature_mean),
        "feature_std": _floats(stats.feature_std),
        "target_mean": float(stats.target_mean),
        "target_std": float(stats.target_std),
        "constant_features": [bool(value) for value in stats.constant_features],
        "constant_target": bool(stats.constant_target),
    }


def _standardization_from_dict(values: dict) -> StandardizationStats:
    return StandardizationStats(
        feature_mean=np.array(values["feature_mean"], dtype=np.float64),
        feature_std=np.array(values["feature_std"], dtype=np.float64),
        target_mean=float(values["target_mean"]),
        target_std=float(values["target_std"]),
        constant_features=np.array(values["constant_features"], dtype=bool),
        constant_target=bool(values["constant_target"]),
    )


def _tree_to_dict(model: VstModel) -> dict:
    posterior = model.posterior
    return {
        "spec": {
            "depth": model.spec.depth,
            "feature_dim": model.spec.feature_dim,
            "leaf_kind": model.spec.leaf_kind.value,
            "beta": float(model.spec.beta),
            "output_mode": model.spec.output_mode.value,
        },
        "posterior": {
            "p": posterior.p,
            "k": posterior.k,
            "mean": _floats(posterior.mean),
            "diag_raw": _floats(posterior.diag_raw),
            "factor": _floats(posterior.factor),
        },
        "prior_variance": float(model.prior.variance),
        "config": model.config.to_dict(),
        "initial_elbo": model.initial_elbo,
        "final_elbo": model.final_elbo,
    }


def _tree_from_dict(values: dict, stats: StandardizationStats) -> VstModel:
    posterior = values["posterior"]
    p, k = int(posterior["p"]), int(posterior["k"])
    return VstModel(
        spec=SoftTreeSpec(**values["spec"]),
        posterior=LowRankGaussian(
            mean=np.array(posterior["mean"], dtype=np.float64),
            diag_raw=np.array(posterior["diag_raw"], dtype=np.float64),
            factor=np.array(posterior["factor"], dtype=np.float64).reshape(p, k),
        ),
        prior=IsotropicPrior(variance=float(values["prior_variance"])),
        standardization=stats,
        config=TrainConfig(**values["config"]),
        initial_elbo=values.get("initial_elbo"),
        final_elbo=values.get("final_elbo"),
    )


def model_to_dict(model: Model) -> dict:
    if isinstance(model, VstModel):
        document = {"model_kind": "vst", "seed": model.config.seed, **_tree_to_dict(model)}
    else:
        config = model.config
        document = {
            "model_kind": "vsgbm",
            "seed": config.tree.seed,
            "config": {
                "num_trees": config.num_trees,
                "a_sigma": float(config.a_sigma),
                "b_sigma": float(config.b_sigma),
                "weak_learner_noise_scale": float(config.weak_learner_noise_scale),
                "shrinkage": float(config.shrinkage),
                "tree": config.tree.to_dict(),
            },
            "trees": [_tree_to_dict(tree) for tree in model.trees],
            "noise_posterior": {
                "shape": float(model.noise_posterior.shape),
                "scale": float(model.noise_posterior.scale),
            },
            "residuals": _floats(model.residuals),
        }
    document["format_version"] = MODEL_FORMAT_VERSION
    document["standardization"] = _standardization_to_dict(model.standardization)
    return document


def model_from_dict(document: dict) -> Model:
    version = document.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(ERROR_UNKNOWN_FORMAT.format(version=version))
    try:
        stats = _standardization_from_dict(document["standardization"])
        kind = document["model_kind"]
        if kind == "vst":
            return _tree_from_dict(document, stats)
        if kind == "vsgbm":
            config = dict(document["config"])
            config["tree"] = TrainConfig(**config["tree"])
            return VsgbmModel(
                trees=tuple(_tree_from_dict(tree, stats) for tree in document["trees"]),
                noise_posterior=InverseGammaPosterior(**document["noise_posterior"]),
                standardization=stats,
                config=VsgbmConfig(**config),
                residuals=np.array(document["residuals"], dtype=np.float64),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"Malformed model file: {exc}") from exc
    raise DataError(f"Unknown model_kind '{kind}'")


def dumps(model: Model) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=2, allow_nan=False) + "\n"


def save_model(model: Model, path) -> None:
    """Write the model file; identical models give byte-identical files"""
    try:
        text = dumps(model)
    except ValueError as exc:
        raise DataError(f"Model contains non-finite values: {exc}") from exc
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info(f"Saved {type(model).__name__} to {path}")


def load_model(path) -> Model:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"File not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"Cannot read model file {path}: {exc}") from exc
    if not isinstance(document, dict):
        raise DataError(f"Model file {path} is not a JSON object")
    return model_from_dict(document)
