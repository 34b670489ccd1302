import numpy as np
import pytest

from spmdesign.config import ModelConfig
from spmdesign.parameters import default_cell, truth_mu
from spmdesign.simulate import CellModel


@pytest.fixture(scope="session")
def cell():
    return default_cell()


@pytest.fixture(scope="session")
def truth():
    return truth_mu()


@pytest.fixture(scope="session")
def model(cell):
    return CellModel(cell, ModelConfig())


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
