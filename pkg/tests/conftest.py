import numpy as np
import pytest
import torch

from handfit.camera import Intrinsics
from handfit.energies import default_skeleton_prior
from handfit.hand_model import load_model
from handfit.toy_model import generate_toy_model

MODEL_ASSET = "src/handfit/assets/toy_hand_model.json"


@pytest.fixture(scope="session")
def model_path():
    from pathlib import Path
    path = Path(__file__).resolve().parent.parent / MODEL_ASSET
    assert path.exists(), f"toy model asset missing: {path}"
    return path


@pytest.fixture(scope="session")
def model(model_path):
    return load_model(model_path)


@pytest.fixture(scope="session")
def arrays():
    return generate_toy_model()


@pytest.fixture(scope="session")
def prior():
    return default_skeleton_prior()


@pytest.fixture
def K64():
    return Intrinsics(fx=128.0, fy=128.0, cx=31.5, cy=31.5, width=64, height=64)


@pytest.fixture
def K128():
    return Intrinsics(fx=230.0, fy=230.0, cx=63.5, cy=63.5, width=128, height=128)


def rand64(*shape, seed=0, scale=1.0):
    gen = torch.Generator().manual_seed(seed)
    return scale * torch.randn(*shape, generator=gen, dtype=torch.float64)


@pytest.fixture(scope="session")
def np_rng():
    return np.random.default_rng(12345)
