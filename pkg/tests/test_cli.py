import pandas as pd
import pytest

from vstree.serialization import load_model

from vstree.cli import main
from vstree.constants import EXIT_DATA, EXIT_OK, EXIT_USAGE

FAST_TREE = ["--steps", "20", "--batch", "16", "--depth", "2", "--rank", "1"]


def report(capsys) -> dict:
    lines = capsys.readouterr().out.strip().splitlines()
    return dict(line.split("=", 1) for line in lines if "=" in line)


@pytest.fixture
def workspace(tmp_path, capsys):
    data = tmp_path / "train.csv"
    assert main(["synth", "--name", "tail_line", "--n", "60", "--noise", "0.1", "--out", str(data)]) == EXIT_OK
    assert report(capsys) == {"rows": "60", "features": "1"}
    return tmp_path


def test_train_eval_ood_sample_chain(workspace, capsys):
    data, model = workspace / "train.csv", workspace / "model.json"
    database = f"sqlite:///{workspace / 'runs.db'}"

    code = main(["train", "--data", str(data), "--out", str(model), "--log", str(workspace / "log.csv"), *FAST_TREE])
    assert code == EXIT_OK
    assert report(capsys)["model_kind"] == "vst"
    assert set(pd.read_csv(workspace / "log.csv").columns) == {"tree", "step", "elbo", "data_fit", "kl"}

    code = main([
        "eval", "--model", str(model), "--data", str(data), "--samples", "16",
        "--rows", str(workspace / "rows.csv"), "--record", "chain", "--database-url", database,
    ])
    assert code == EXIT_OK
    assert {"mean_loglik", "rmse", "mean_epistemic_std"} <= set(report(capsys))
    assert len(pd.read_csv(workspace / "rows.csv")) == 60

    code = main([
        "ood", "--model", str(model), "--id", str(data), "--ood", str(data), "--samples", "8",
        "--scores", str(workspace / "scores.csv"),
    ])
    assert code == EXIT_OK
    assert 0.0 <= float(report(capsys)["auroc"]) <= 1.0
    assert list(pd.read_csv(workspace / "scores.csv").columns) == ["score", "is_ood"]

    code = main(["sample", "--model", str(model), "--samples", "3", "--grid-points", "11", "--out", str(workspace / "f.csv")])
    assert code == EXIT_OK
    assert list(pd.read_csv(workspace / "f.csv").columns) == ["x", "f0", "f1", "f2"]

    capsys.readouterr()
    assert main(["runs", "--database-url", database]) == EXIT_OK
    out = capsys.readouterr().out
    assert "eval\tchain\trmse\tn=1" in out


def test_boosted_training(workspace, capsys):
    code = main(["train", "--data", str(workspace / "train.csv"), "--out", str(workspace / "gbm.json"), "--trees", "2", *FAST_TREE])
    assert code == EXIT_OK
    values = report(capsys)
    assert values["model_kind"] == "vsgbm"
    assert float(values["noise_shape"]) == pytest.approx(3.0 + 60)


def test_cv_reports_test_metrics(workspace, capsys):
    code = main(["cv", "--data", str(workspace / "train.csv"), "--folds", "2", "--samples", "8", *FAST_TREE])
    assert code == EXIT_OK
    assert "test_rmse_mean" in report(capsys)


def test_ood_folds_refit_per_fold(workspace, capsys):
    data = workspace / "train.csv"
    code = main([
        "ood", "--id", str(data), "--ood", str(data), "--folds", "3", "--samples", "8",
        "--scores", str(workspace / "scores.csv"), *FAST_TREE,
    ])
    assert code == EXIT_OK
    values = report(capsys)
    assert values["folds"] == "3"
    assert 0.0 <= float(values["auroc_mean"]) <= 1.0
    assert float(values["auroc_std"]) >= 0.0
    scores = pd.read_csv(workspace / "scores.csv")
    assert list(scores.columns) == ["fold", "score", "is_ood"]
    assert len(scores) == 60 + 3 * 60


def test_ood_without_model_or_folds_is_a_usage_error(workspace):
    data = str(workspace / "train.csv")
    assert main(["ood", "--id", data, "--ood", data]) == EXIT_USAGE


def test_original_units_scale_the_epistemic_summary(workspace, capsys):
    data, model = workspace / "train.csv", workspace / "model.json"
    assert main(["train", "--data", str(data), "--out", str(model), *FAST_TREE]) == EXIT_OK
    capsys.readouterr()
    assert main(["eval", "--model", str(model), "--data", str(data), "--samples", "16"]) == EXIT_OK
    standardized = float(report(capsys)["mean_epistemic_std"])
    assert main(["eval", "--model", str(model), "--data", str(data), "--samples", "16", "--original-units"]) == EXIT_OK
    original = float(report(capsys)["mean_epistemic_std"])
    target_std = load_model(model).standardization.target_std
    assert target_std != pytest.approx(1.0)
    assert original == pytest.approx(standardized * target_std, rel=1e-12)


def test_training_twice_writes_identical_files(workspace):
    data = str(workspace / "train.csv")
    for name in ("first", "second"):
        args = ["train", "--data", data, "--out", str(workspace / f"{name}.json"), "--log", str(workspace / f"{name}.csv")]
        assert main([*args, *FAST_TREE, "--trees", "2"]) == EXIT_OK
    assert (workspace / "first.json").read_bytes() == (workspace / "second.json").read_bytes()
    assert (workspace / "first.csv").read_bytes() == (workspace / "second.csv").read_bytes()


def test_random_bandit_trace(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    code = main(["bandit", "--agent", "random", "--horizon", "1", "--trace", str(trace)])
    assert code == EXIT_OK
    assert len(pd.read_csv(trace)) == 1
    values = report(capsys)
    assert float(values["random_policy_regret"]) > 0


def test_invalid_depth_is_a_usage_error(workspace):
    code = main(["train", "--data", str(workspace / "train.csv"), "--out", str(workspace / "m.json"), "--depth", "0"])
    assert code == EXIT_USAGE


def test_missing_table_is_a_data_error(tmp_path):
    assert main(["eval", "--model", str(tmp_path / "m.json"), "--data", str(tmp_path / "absent.csv")]) == EXIT_DATA


def test_replay_without_file_is_a_usage_error():
    assert main(["bandit", "--env", "replay", "--agent", "random", "--horizon", "5"]) == EXIT_USAGE


def test_ragged_table_is_a_data_error(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("x,y\n1,2\n3,4,5\n")
    assert main(["train", "--data", str(ragged), "--out", str(tmp_path / "m.json")]) == EXIT_DATA
