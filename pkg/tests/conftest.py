import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from hsi_dip.cube import HsiCube


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training experiments")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def interior_cube(rng):
    """Normalized cube with every value strictly inside (0, 1)."""
    return HsiCube(rng.uniform(0.05, 0.95, size=(100, 100, 10)), normalized=True)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield
