import os, sys

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

from DiffusionUtil import make_linear_schedule  # noqa: E402
from EpsilonModel import EpsilonModel, ModelArchitecture  # noqa: E402


class ZeroEpsilon:
    """ε_θ ≡ 0, for checking the reverse-step arithmetic by hand."""

    def __init__(self, shape=(1, 8, 8)):
        self.architecture = ModelArchitecture(channels=shape[0], height=shape[1], width=shape[2])

    def predict(self, x, t):
        return np.zeros_like(x)


@pytest.fixture
def tiny_architecture():
    return ModelArchitecture(channels=1, height=8, width=8, widths=[4, 4, 4, 4], time_dim=8)


@pytest.fixture
def tiny_model(tiny_architecture):
    return EpsilonModel(tiny_architecture, seed=3)


@pytest.fixture
def short_schedule():
    return make_linear_schedule(10, 1e-3, 0.2)


@pytest.fixture
def zero_model():
    return ZeroEpsilon()
