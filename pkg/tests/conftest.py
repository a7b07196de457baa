import numpy as np
import pytest
import torch

from mixinterp.data import make_classification_dataset
from mixinterp.harness import ArchConfig, Hyperparams, build_model, train

torch.manual_seed(0)


@pytest.fixture(scope="session")
def tiny_arch():
    return ArchConfig(depth=8, width=16, num_classes=10)


@pytest.fixture(scope="session")
def tiny_dataset():
    return make_classification_dataset(400, np.random.default_rng(0), image_size=32)


@pytest.fixture(scope="session")
def trained_checkpoint(tiny_arch, tiny_dataset):
    """One short baseline training run shared by tests that need a real model."""
    model = build_model(tiny_arch, seed=0)
    hyper = Hyperparams(epochs=25, batch_size=64, lr=0.1, lr_decay_epochs=(18, 22))
    return train(model, tiny_dataset, "baseline", hyper, seed=0)


@pytest.fixture(scope="session")
def trained_model(trained_checkpoint):
    return trained_checkpoint.build()
