import json

import numpy as np
import pytest

from vstree.data import synth
from vstree.errors import DataError
from vstree.predictive import draw_predictions
from vstree.serialization import dumps, load_model, model_from_dict, model_to_dict, save_model
from vstree.vsgbm import VsgbmConfig, VsgbmModel, fit_vsgbm
from vstree.vst_training import TrainConfig, VstModel, fit_vst


@pytest.fixture
def trained_vst(tiny_train_config):
    data = synth("tail_line", 40, 0.1, 0)
    return data, fit_vst(data.features, data.target, tiny_train_config)


@pytest.fixture
def trained_vsgbm():
    data = synth("linear", 40, 0.1, 1)
    config = VsgbmConfig(num_trees=2, tree=TrainConfig(steps=10, batch_size=20, depth=1, rank=1))
    return data, fit_vsgbm(data.features, data.target, config)


def test_vst_reload_predicts_identically(tmp_path, trained_vst):
    data, model = trained_vst
    save_model(model, tmp_path / "vst.json")
    loaded = load_model(tmp_path / "vst.json")
    assert isinstance(loaded, VstModel)
    np.testing.assert_array_equal(loaded.posterior.to_vector(), model.posterior.to_vector())
    np.testing.assert_array_equal(
        draw_predictions(loaded, data.features, 8, 0).means, draw_predictions(model, data.features, 8, 0).means
    )


def test_vsgbm_reload_predicts_identically(tmp_path, trained_vsgbm):
    data, model = trained_vsgbm
    save_model(model, tmp_path / "vsgbm.json")
    loaded = load_model(tmp_path / "vsgbm.json")
    assert isinstance(loaded, VsgbmModel)
    assert loaded.noise_posterior == model.noise_posterior
    np.testing.assert_array_equal(
        draw_predictions(loaded, data.features, 8, 0).means, draw_predictions(model, data.features, 8, 0).means
    )


def test_saving_twice_gives_identical_bytes(trained_vst):
    _, model = trained_vst
    assert dumps(model_from_dict(model_to_dict(model))) == dumps(model)


def test_document_records_version_and_kind(trained_vsgbm):
    _, model = trained_vsgbm
    document = json.loads(dumps(model))
    assert document["format_version"] == 1
    assert document["model_kind"] == "vsgbm"
    assert len(document["trees"]) == 2


def test_unknown_version_rejected(trained_vst):
    _, model = trained_vst
    document = model_to_dict(model)
    document["format_version"] = 99
    with pytest.raises(DataError):
        model_from_dict(document)


def test_truncated_document_rejected(trained_vst):
    _, model = trained_vst
    document = model_to_dict(model)
    del document["posterior"]
    with pytest.raises(DataError):
        model_from_dict(document)


def test_unreadable_files(tmp_path):
    with pytest.raises(DataError):
        load_model(tmp_path / "absent.json")
    (tmp_path / "garbage.json").write_text("{not json")
    with pytest.raises(DataError):
        load_model(tmp_path / "garbage.json")
