"""
Command-line interface: train, eval, ood, bandit, sample, synth, cv, runs
"""
import argparse
import logging
import sys
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from vstree.bandit import (
    AgentConfig,
    ExplorationEnv,
    LinearPortfolioEnv,
    ReplayEnv,
    random_policy_regret,
    run_bandit,
)
from vstree.constants import (
    A_SIGMA_RANGE,
    B_SIGMA_RANGE,
    BANDIT_BATCH_SIZE,
    BANDIT_TRAIN_STEPS,
    BETA_RANGE,
    DEFAULT_A_SIGMA,
    DEFAULT_B_SIGMA,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETA,
    DEFAULT_DEPTH,
    DEFAULT_FOLDS,
    DEFAULT_FUNCTION_SAMPLES,
    DEFAULT_HORIZON,
    DEFAULT_LEAF_KIND,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MC_SAMPLES_TRAIN,
    DEFAULT_NUM_TREES,
    DEFAULT_PRIOR_SCALE,
    DEFAULT_RANK,
    DEFAULT_RETRAIN_EVERY,
    DEFAULT_SEED,
    DEFAULT_SHRINKAGE,
    DEFAULT_STEPS,
    DEFAULT_TARGET_COLUMN,
    DEFAULT_WEAK_LEARNER_NOISE_SCALE,
    DEPTH_RANGE,
    ERROR_UNKNOWN_NAME,
    EVAL_SAMPLES,
    EXIT_OK,
    EXPLORATION_ALPHA,
    EXPLORATION_ARMS,
    EXPLORATION_BETA,
    EXPLORATION_DELTA,
    EXPLORATION_OFFSET_RANGE,
    LEARNING_RATE_RANGE,
    LOG_LEVEL,
    NUM_TREES_RANGE,
    PORTFOLIO_ARMS,
    PORTFOLIO_FEATURE_DIM,
    PRIOR_SCALE_RANGE,
    SAMPLE_GRID_MAX,
    SAMPLE_GRID_MIN,
    SAMPLE_GRID_POINTS,
    SYNTH_NAMES,
    TORCH_THREADS,
)
from vstree.data import load_table, save_table, synth
from vstree.database import session_scope
from vstree.errors import InvalidArgumentError, VstreeError
from vstree.ood import ood_cross_validate, ood_report
from vstree.predictive import (
    Model,
    cross_validate,
    draw_predictions,
    predictive_loglik,
    regression_metrics,
    summarize,
)
from vstree.serialization import load_model, save_model
from vstree.services import RunService
from vstree.vsgbm import VsgbmConfig, VsgbmModel, fit_vsgbm
from vstree.vst_training import TrainConfig, VstModel, fit_vst, with_seed

logger = logging.getLogger(__name__)

ENV_NAMES = ("exploration", "portfolio", "replay")
AGENT_NAMES = ("vst", "random", "oracle")


# ========================
# Helpers
# ========================

def emit(report: Dict[str, object]):
    """Print a flat key-value report, one `key=value` line per field"""
    for key, value in report.items():
        if isinstance(value, float):
            value = repr(value)
        print(f"{key}={value}")


def _warn_out_of_range(name: str, value: float, bounds):
    low, high = bounds
    if not low <= value <= high:
        logger.warning(f"--{name} {value} lies outside the usual tuning range [{low}, {high}]")


def _add_tree_flags(parser: argparse.ArgumentParser, steps: int = DEFAULT_STEPS, batch: int = DEFAULT_BATCH_SIZE):
    parser.add_argument("--depth", type=int, default=DEFAULT_DEPTH, help="Tree depth")
    parser.add_argument("--leaf", choices=("constant", "linear"), default=DEFAULT_LEAF_KIND, help="Leaf model")
    parser.add_argument("--beta", type=float, default=DEFAULT_BETA, help="Gating inverse temperature")
    parser.add_argument("--rank", type=int, default=DEFAULT_RANK, help="Posterior covariance rank k")
    parser.add_argument("--prior-scale", type=float, default=DEFAULT_PRIOR_SCALE, help="Prior standard deviation")
    parser.add_argument("--lr", type=float, default=DEFAULT_LEARNING_RATE, help="Adam learning rate")
    parser.add_argument("--steps", type=int, default=steps, help="Optimization steps per tree")
    parser.add_argument("--batch", type=int, default=batch, help="Minibatch size")
    parser.add_argument("--mc-samples", type=int, default=DEFAULT_MC_SAMPLES_TRAIN, help="Posterior draws per step")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Master seed")


def _add_boosting_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--trees", type=int, default=DEFAULT_NUM_TREES, help="Number of trees (> 1 selects VSGBM)")
    parser.add_argument("--a-sigma", type=float, default=DEFAULT_A_SIGMA, help="Inverse-Gamma prior shape")
    parser.add_argument("--b-sigma", type=float, default=DEFAULT_B_SIGMA, help="Inverse-Gamma prior scale")
    parser.add_argument(
        "--weak-noise", type=float, default=DEFAULT_WEAK_LEARNER_NOISE_SCALE, help="Per-tree likelihood std"
    )
    parser.add_argument("--shrinkage", type=float, default=DEFAULT_SHRINKAGE, help="Multiplier of every tree output")


def _add_data_flags(parser: argparse.ArgumentParser, flag: str = "--data"):
    parser.add_argument(flag, required=True, help="CSV table with a header row")
    parser.add_argument("--target", default=DEFAULT_TARGET_COLUMN, help="Target column name")
    parser.add_argument("--categorical", action="append", default=[], help="Column to one-hot encode (repeatable)")
    parser.add_argument("--schema", default=None, help='JSON sidecar {"categorical": [...]}')


def _add_run_store_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--record", metavar="TAG", default=None, help="Store the metrics in the run store")
    parser.add_argument("--database-url", default=None, help="Run-store URL (default VSTREE_DATABASE_URL)")


def train_config_from_args(args, allow_constant_target: bool = False) -> TrainConfig:
    _warn_out_of_range("depth", args.depth, DEPTH_RANGE)
    _warn_out_of_range("beta", args.beta, BETA_RANGE)
    _warn_out_of_range("prior-scale", args.prior_scale, PRIOR_SCALE_RANGE)
    _warn_out_of_range("lr", args.lr, LEARNING_RATE_RANGE)
    return TrainConfig(
        steps=args.steps,
        batch_size=args.batch,
        learning_rate=args.lr,
        prior_scale=args.prior_scale,
        beta=args.beta,
        depth=args.depth,
        rank=args.rank,
        mc_samples_train=args.mc_samples,
        seed=args.seed,
        leaf_kind=args.leaf,
        allow_constant_target=allow_constant_target,
    )


def fit_from_args(args, X: np.ndarray, y: np.ndarray, seed: Optional[int] = None) -> Model:
    """Fit a VST (--trees 1) or a VSGBM (--trees > 1)"""
    tree = train_config_from_args(args)
    if seed is not None:
        tree = with_seed(tree, seed)
    if args.trees == 1:
        return fit_vst(X, y, tree)
    _warn_out_of_range("trees", args.trees, NUM_TREES_RANGE)
    _warn_out_of_range("a-sigma", args.a_sigma, A_SIGMA_RANGE)
    _warn_out_of_range("b-sigma", args.b_sigma, B_SIGMA_RANGE)
    config = VsgbmConfig(
        num_trees=args.trees,
        a_sigma=args.a_sigma,
        b_sigma=args.b_sigma,
        tree=tree,
        weak_learner_noise_scale=args.weak_noise,
        shrinkage=args.shrinkage,
    )
    return fit_vsgbm(X, y, config)


def _load(args, path: str):
    return load_table(path, args.target, args.categorical, args.schema)


def training_log_frame(model: Model) -> pd.DataFrame:
    trees = [model] if isinstance(model, VstModel) else list(model.trees)
    rows = [
        {"tree": index, "step": entry.step, "elbo": entry.elbo, "data_fit": entry.data_fit, "kl": entry.kl}
        for index, tree in enumerate(trees)
        for entry in tree.training_log
    ]
    return pd.DataFrame(rows, columns=["tree", "step", "elbo", "data_fit", "kl"])


def _record(args, command: str, metrics: Dict[str, float]):
    if args.record is None:
        return
    config = {
        key: value
        for key, value in vars(args).items()
        if key not in ("handler", "record", "database_url") and isinstance(value, (int, float, str, bool, list, type(None)))
    }
    with session_scope(args.database_url) as db:
        RunService(db).record_run(command, args.record, getattr(args, "seed", 0), config, metrics)


# ========================
# Subcommands
# ========================

def cmd_train(args) -> Dict[str, float]:
    """Fit a model on a table and write the model file plus the training log"""
    dataset = _load(args, args.data)
    model = fit_from_args(args, dataset.features, dataset.target)
    save_model(model, args.out)
    if args.log is not None:
        training_log_frame(model).to_csv(args.log, index=False)

    trees = [model] if isinstance(model, VstModel) else list(model.trees)
    report = {
        "model_kind": "vst" if isinstance(model, VstModel) else "vsgbm",
        "initial_elbo": float(trees[-1].initial_elbo),
        "final_elbo": float(trees[-1].final_elbo),
    }
    if isinstance(model, VsgbmModel):
        report["noise_shape"] = float(model.noise_posterior.shape)
        report["noise_scale"] = float(model.noise_posterior.scale)
    emit(report)
    return {key: value for key, value in report.items() if isinstance(value, float)}


def cmd_eval(args) -> Dict[str, float]:
    """Predictive metrics of a model on a table"""
    model = load_model(args.model)
    dataset = _load(args, args.data)
    metrics = regression_metrics(
        model, dataset.features, dataset.target, args.samples, args.seed, original_units=args.original_units
    )
    summary = summarize(model, dataset.features, None, args.samples, args.seed)
    target_scale = model.standardization.target_std if args.original_units else 1.0
    report = {
        "mean_loglik": metrics.mean_loglik,
        "rmse": metrics.rmse,
        "mean_epistemic_std": float(summary.epistemic_std.mean()) * target_scale,
    }
    emit(report)
    if args.rows is not None:
        loglik = predictive_loglik(model, dataset.features, dataset.target, args.samples, args.seed)
        std = model.standardization
        pd.DataFrame(
            {
                "y": dataset.target,
                "predictive_mean": std.inverse_target(summary.predictive_mean),
                "predictive_std": summary.predictive_std * std.target_std,
                "epistemic_std": summary.epistemic_std * std.target_std,
                "loglik": loglik,
            }
        ).to_csv(args.rows, index=False)
    return report


def cmd_ood(args) -> Dict[str, float]:
    """Score ID and OOD tables by epistemic uncertainty"""
    if args.folds is not None:
        return _cmd_ood_folds(args)
    if args.model is None:
        raise InvalidArgumentError("ood needs --model, or --folds to fit one per fold")
    model = load_model(args.model)
    id_data = _load(args, args.id)
    ood_data = _load(args, args.ood)
    report = ood_report(model, id_data.features, ood_data.features, args.samples, args.seed)
    values = {
        "auroc": report.auroc,
        "threshold": report.best_threshold,
        "accuracy": report.threshold_accuracy,
    }
    emit(values)
    if args.scores is not None:
        pd.DataFrame(report.score_table(), columns=["score", "is_ood"]).astype({"is_ood": int}).to_csv(
            args.scores, index=False
        )
    return values


def _cmd_ood_folds(args) -> Dict[str, float]:
    id_data = _load(args, args.id)
    ood_data = _load(args, args.ood)

    def fit_fold(X, y, fold):
        return fit_from_args(args, X, y, seed=args.seed + fold)

    result = ood_cross_validate(
        id_data.features, id_data.target, ood_data.features, fit_fold, args.folds, args.seed, args.samples
    )
    auroc_mean, auroc_std = result.mean_std("auroc")
    accuracy_mean, accuracy_std = result.mean_std("threshold_accuracy")
    values = {
        "folds": len(result.reports),
        "auroc_mean": auroc_mean,
        "auroc_std": auroc_std,
        "accuracy_mean": accuracy_mean,
        "accuracy_std": accuracy_std,
    }
    emit(values)
    if args.scores is not None:
        pd.DataFrame(result.score_table(), columns=["fold", "score", "is_ood"]).astype(
            {"fold": int, "is_ood": int}
        ).to_csv(args.scores, index=False)
    return values


def _make_env(args, seed: int):
    if args.env == "exploration":
        return ExplorationEnv(
            alpha=args.alpha,
            beta_env=args.beta_env,
            delta=args.delta,
            offsets=np.linspace(*EXPLORATION_OFFSET_RANGE, args.arms),
        )
    if args.env == "portfolio":
        return LinearPortfolioEnv.generate(seed, args.feature_dim, args.arms)
    if args.env == "replay":
        if args.replay is None:
            raise InvalidArgumentError("--env replay needs --replay FILE")
        return ReplayEnv.from_table(args.replay)
    raise InvalidArgumentError(ERROR_UNKNOWN_NAME.format(what="environment", name=args.env, choices=ENV_NAMES))


def cmd_bandit(args) -> Dict[str, float]:
    """Run a contextual bandit and write the regret trace"""
    agent = AgentConfig(
        kind=args.agent,
        retrain_every=args.retrain_every,
        warm_start=not args.no_warm_start,
        train=train_config_from_args(args, allow_constant_target=True),
    )
    if args.repeats < 1:
        raise InvalidArgumentError(f"--repeats must be >= 1, got {args.repeats}")

    finals = []
    for repeat in range(args.repeats):
        seed = args.seed + repeat
        env = _make_env(args, seed)
        trace = run_bandit(env, agent, args.horizon, seed)
        finals.append(trace.final_regret)
        if repeat == 0 and args.trace is not None:
            trace.to_frame().to_csv(args.trace, index=False)

    finals = np.array(finals)
    report = {
        "final_regret": float(finals[0]),
        "mean_regret": float(finals.mean()),
        "std_regret": float(finals.std()),
        "random_policy_regret": random_policy_regret(_make_env(args, args.seed), args.horizon, args.seed),
    }
    emit(report)
    return report


def cmd_sample(args) -> Dict[str, float]:
    """Posterior function draws on a 1-D grid"""
    model = load_model(args.model)
    if args.samples < 1:
        raise InvalidArgumentError(f"--samples must be >= 1, got {args.samples}")
    if model.feature_dim > 1 and args.feature is None:
        raise InvalidArgumentError(f"Model has {model.feature_dim} features; choose one with --feature")
    feature = 0 if args.feature is None else args.feature
    if not 0 <= feature < model.feature_dim:
        raise InvalidArgumentError(f"--feature {feature} out of range [0, {model.feature_dim})")

    grid = np.linspace(args.grid_min, args.grid_max, args.grid_points)
    X = np.tile(model.standardization.feature_mean, (grid.shape[0], 1))
    X[:, feature] = grid
    draws = draw_predictions(model, X, args.samples, args.seed)
    functions = model.standardization.inverse_target(draws.means)

    frame = pd.DataFrame({"x": grid})
    for index in range(args.samples):
        frame[f"f{index}"] = functions[index]
    frame.to_csv(args.out, index=False)
    logger.info(f"Wrote {args.samples} function samples on {grid.shape[0]} grid points to {args.out}")
    return {}


def cmd_synth(args) -> Dict[str, float]:
    dataset = synth(args.name, args.n, args.noise, args.seed)
    save_table(dataset, args.out)
    emit({"rows": dataset.n, "features": dataset.p})
    return {}


def cmd_cv(args) -> Dict[str, float]:
    """Train/test split, k-fold CV on the training part, metrics on the test split"""
    dataset = _load(args, args.data)

    def fit_fold(X, y, fold):
        return fit_from_args(args, X, y, seed=args.seed + fold)

    report = cross_validate(dataset.features, dataset.target, fit_fold, args.folds, args.seed, args.samples)
    loglik_mean, loglik_std = report.mean_std("test", "mean_loglik")
    rmse_mean, rmse_std = report.mean_std("test", "rmse")
    values = {
        "test_loglik_mean": loglik_mean,
        "test_loglik_std": loglik_std,
        "test_rmse_mean": rmse_mean,
        "test_rmse_std": rmse_std,
    }
    emit(values)
    return values


def cmd_runs(args) -> Dict[str, float]:
    """Aggregate recorded runs"""
    with session_scope(args.database_url) as db:
        summary = RunService(db).metric_summary(args.command_name, args.tag)
    if not summary:
        print("No recorded runs.")
    for row in summary:
        print(
            f"{row['command']}\t{row['tag']}\t{row['metric']}\t"
            f"n={row['count']}\tmean={row['mean']:.6g}\tstd={row['std']:.6g}"
        )
    return {}


# ========================
# Parser
# ========================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vstree", description="Variational soft trees and boosted ensembles")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Fit a VST or VSGBM")
    _add_data_flags(train)
    _add_tree_flags(train)
    _add_boosting_flags(train)
    train.add_argument("--out", required=True, help="Model file to write")
    train.add_argument("--log", default=None, help="Training-log table to write")
    _add_run_store_flags(train)
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("eval", help="Predictive metrics on a table")
    evaluate.add_argument("--model", required=True)
    _add_data_flags(evaluate)
    evaluate.add_argument("--samples", type=int, default=EVAL_SAMPLES, help="Posterior draws S")
    evaluate.add_argument("--seed", type=int, default=DEFAULT_SEED)
    evaluate.add_argument("--original-units", action="store_true", help="Report in original target units")
    evaluate.add_argument("--rows", default=None, help="Per-row table to write")
    _add_run_store_flags(evaluate)
    evaluate.set_defaults(handler=cmd_eval)

    ood = commands.add_parser("ood", help="OOD detection by epistemic uncertainty")
    ood.add_argument("--model", default=None, help="Fitted model; omit with --folds")
    _add_data_flags(ood, "--id")
    ood.add_argument("--ood", required=True, help="Out-of-distribution table")
    ood.add_argument("--samples", type=int, default=EVAL_SAMPLES)
    ood.add_argument("--folds", type=int, default=None, help="Refit per k-fold split of the ID table")
    _add_tree_flags(ood)
    _add_boosting_flags(ood)
    ood.add_argument("--scores", default=None, help="Score table to write (gains a fold column with --folds)")
    _add_run_store_flags(ood)
    ood.set_defaults(handler=cmd_ood)

    bandit = commands.add_parser("bandit", help="Thompson-sampling contextual bandit")
    bandit.add_argument("--env", choices=ENV_NAMES, default="exploration")
    bandit.add_argument("--agent", choices=AGENT_NAMES, default="vst")
    bandit.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    bandit.add_argument("--retrain-every", type=int, default=DEFAULT_RETRAIN_EVERY)
    bandit.add_argument("--no-warm-start", action="store_true")
    bandit.add_argument("--repeats", type=int, default=1, help="Seeds seed, seed+1, ...")
    bandit.add_argument("--alpha", type=float, default=EXPLORATION_ALPHA, help="Bump half-width")
    bandit.add_argument("--beta-env", type=float, default=EXPLORATION_BETA, help="Bump sharpness")
    bandit.add_argument("--delta", type=float, default=EXPLORATION_DELTA, help="Reward noise std")
    bandit.add_argument("--arms", type=int, default=None, help="Number of arms")
    bandit.add_argument("--feature-dim", type=int, default=PORTFOLIO_FEATURE_DIM, help="Portfolio context size")
    bandit.add_argument("--replay", default=None, help="Replay table with reward_* columns")
    bandit.add_argument("--trace", default=None, help="Trace table to write")
    _add_tree_flags(bandit, steps=BANDIT_TRAIN_STEPS, batch=BANDIT_BATCH_SIZE)
    _add_run_store_flags(bandit)
    bandit.set_defaults(handler=cmd_bandit)

    sample = commands.add_parser("sample", help="Posterior function samples on a grid")
    sample.add_argument("--model", required=True)
    sample.add_argument("--samples", type=int, default=DEFAULT_FUNCTION_SAMPLES)
    sample.add_argument("--feature", type=int, default=None, help="Feature to sweep; others fixed at their mean")
    sample.add_argument("--grid-min", type=float, default=SAMPLE_GRID_MIN)
    sample.add_argument("--grid-max", type=float, default=SAMPLE_GRID_MAX)
    sample.add_argument("--grid-points", type=int, default=SAMPLE_GRID_POINTS)
    sample.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sample.add_argument("--out", required=True)
    sample.set_defaults(handler=cmd_sample, record=None)

    synthetic = commands.add_parser("synth", help="Write a synthetic dataset")
    synthetic.add_argument("--name", choices=SYNTH_NAMES, required=True)
    synthetic.add_argument("--n", type=int, required=True)
    synthetic.add_argument("--noise", type=float, default=0.0)
    synthetic.add_argument("--seed", type=int, default=DEFAULT_SEED)
    synthetic.add_argument("--out", required=True)
    synthetic.set_defaults(handler=cmd_synth, record=None)

    cv = commands.add_parser("cv", help="Cross-validated test metrics")
    _add_data_flags(cv)
    _add_tree_flags(cv)
    _add_boosting_flags(cv)
    cv.add_argument("--folds", type=int, default=DEFAULT_FOLDS)
    cv.add_argument("--samples", type=int, default=EVAL_SAMPLES)
    _add_run_store_flags(cv)
    cv.set_defaults(handler=cmd_cv)

    runs = commands.add_parser("runs", help="Aggregate recorded runs")
    runs.add_argument("--command", dest="command_name", default=None, help="Filter by subcommand")
    runs.add_argument("--tag", default=None)
    runs.add_argument("--database-url", default=None)
    runs.set_defaults(handler=cmd_runs, record=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    logging.basicConfig(level=LOG_LEVEL)
    torch.set_num_threads(TORCH_THREADS)
    args = build_parser().parse_args(argv)
    if getattr(args, "arms", "unset") is None:
        args.arms = EXPLORATION_ARMS if args.env == "exploration" else PORTFOLIO_ARMS

    try:
        metrics = args.handler(args)
        _record(args, args.command, {key: value for key, value in metrics.items() if isinstance(value, float)})
    except VstreeError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
