import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_dataset():
    from igm.data import generate_synthetic_dataset

    return generate_synthetic_dataset(6, 5, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
