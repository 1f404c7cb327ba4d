import numpy as np
import pytest
import torch

from hwdnet.data import generate_synthetic_dataset


@pytest.fixture(scope="session", autouse=True)
def _double_default_off():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 identities x 4 samples per modality, 32px images."""
    root = tmp_path_factory.mktemp("tiny")
    index = generate_synthetic_dataset(4, 4, 0, root, img_size=32)
    return root, index


@pytest.fixture(scope="session")
def medium_dataset(tmp_path_factory):
    """40 identities x 4 samples per modality, 32px images."""
    root = tmp_path_factory.mktemp("medium")
    index = generate_synthetic_dataset(40, 4, 0, root, img_size=32)
    return root, index
