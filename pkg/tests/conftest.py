import numpy as np
import pytest

from linpath import mlp_spec, resnet_mini_spec, synthetic_blobs


@pytest.fixture(scope="session")
def small_mlp_spec():
    return mlp_spec(hidden=(16, 8), input_shape=(12,), num_classes=3)


@pytest.fixture(scope="session")
def small_mlp_spec_f64():
    return mlp_spec(hidden=(16, 8), input_shape=(12,), num_classes=3, precision="f64")


@pytest.fixture(scope="session")
def tiny_resnet_spec():
    return resnet_mini_spec(input_shape=(6, 6, 3), num_classes=4)


@pytest.fixture(scope="session")
def tiny_resnet_spec_f64():
    return resnet_mini_spec(input_shape=(6, 6, 3), num_classes=4, precision="f64")


@pytest.fixture(scope="session")
def blob_test_set():
    return synthetic_blobs(3, 12, 60, 4.0, seed=11, split="test")


@pytest.fixture(scope="session")
def blob_train_set():
    return synthetic_blobs(3, 12, 60, 4.0, seed=11, split="train")


@pytest.fixture(scope="session")
def image_blob_test_set():
    # flat blobs reshaped by the engine into (6, 6, 3) images
    return synthetic_blobs(4, 6 * 6 * 3, 30, 5.0, seed=13, split="test")


@pytest.fixture(scope="session")
def image_blob_train_set():
    return synthetic_blobs(4, 6 * 6 * 3, 30, 5.0, seed=13, split="train")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
