import json

import pytest

from linpath.config import DatasetConfig, ExperimentConfig
from linpath.errors import ConfigError
from linpath.nn.spec import ModelSpec
from linpath.trainer import Hyperparams


def blob_config(**overrides):
    kw = dict(
        name="tiny",
        model=ModelSpec(kind="mlp", input_shape=(10,), num_classes=3, hidden=(8,)),
        hyperparams=Hyperparams(lr=0.1, momentum=0.9, batch_size=16, t_max=20),
        dataset=DatasetConfig(kind="blobs", classes=3, dims=10, per_class=50,
                              separation=4.0, seed=5),
        seeds=(1, 2),
        n_points=7,
    )
    kw.update(overrides)
    return ExperimentConfig(**kw)


def test_roundtrip_through_file(tmp_path):
    cfg = blob_config()
    path = tmp_path / "cfg.json"
    cfg.save(path)
    again = ExperimentConfig.from_file(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.digest() == cfg.digest()


def test_unknown_top_level_key_rejected(tmp_path):
    d = blob_config().to_dict()
    d["n_pionts"] = 50  # typo must be an error, not a warning
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ConfigError, match="n_pionts"):
        ExperimentConfig.from_file(path)


def test_unknown_nested_key_rejected(tmp_path):
    d = blob_config().to_dict()
    d["hyperparams"]["momentun"] = 0.9
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ConfigError, match="momentun"):
        ExperimentConfig.from_file(path)

    d = blob_config().to_dict()
    d["model"]["wdiths"] = [1]
    path.write_text(json.dumps(d))
    with pytest.raises(ConfigError, match="wdiths"):
        ExperimentConfig.from_file(path)


def test_missing_required_key(tmp_path):
    d = blob_config().to_dict()
    del d["hyperparams"]["lr"]
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ConfigError, match="lr"):
        ExperimentConfig.from_file(path)


def test_version_checked():
    d = blob_config().to_dict()
    d["version"] = 99
    with pytest.raises(ConfigError, match="version"):
        ExperimentConfig.from_dict(d)


def test_zero_seeds_rejected():
    with pytest.raises(ConfigError, match="seed"):
        blob_config(seeds=())


def test_duplicate_seeds_rejected():
    with pytest.raises(ConfigError):
        blob_config(seeds=(1, 1))


def test_bad_enums_rejected():
    with pytest.raises(ConfigError):
        blob_config(bn_mode="renormalize")
    with pytest.raises(ConfigError):
        blob_config(barrier_definition="peak")
    with pytest.raises(ConfigError):
        blob_config(n_points=1)


def test_digest_tracks_content():
    a = blob_config()
    b = blob_config(n_points=9)
    assert a.digest() != b.digest()
    assert a.digest() == blob_config().digest()


def test_dataset_kinds_strict():
    with pytest.raises(ConfigError, match="kind"):
        ExperimentConfig.from_dict({**blob_config().to_dict(),
                                    "dataset": {"kind": "imagenet"}})
    d = blob_config().to_dict()
    d["dataset"] = {"kind": "idx", "train_images": "a", "train_labels": "b",
                    "test_images": "c", "test_labels": "d", "extra": 1}
    with pytest.raises(ConfigError, match="extra"):
        ExperimentConfig.from_dict(d)
