import numpy as np
import pytest

from dpnn.dataio import default_synth_config, generate_synthetic
from dpnn.model import Batch, Hyperparams, init_model
from dpnn.numerics import RngStream


@pytest.fixture(scope="session")
def small_data():
    ds, clusters = generate_synthetic(default_synth_config(400, seed=11, separation=1.5))
    return ds, clusters


@pytest.fixture
def tiny_hyper():
    return Hyperparams(latent_dim=4, encoder_hidden=[6], classifier_hidden=[5], epochs=3, batch_size=32)


def make_batch(rng: RngStream, n: int = 8, p: int = 19, T: int = 8) -> Batch:
    y = np.zeros(n, dtype=np.int64)
    y[: n // 2] = 1
    return Batch(rng.normal(size=(n, p)), rng.integers(0, T, size=n), y[rng.permutation(n)])


@pytest.fixture
def model_and_batch():
    h = Hyperparams(latent_dim=4, encoder_hidden=[6], classifier_hidden=[5])
    rng = RngStream(5)
    batch = make_batch(rng.derive("batch"))
    model = init_model(h, rng=rng.derive("init"), data=batch.x)
    return model, batch
