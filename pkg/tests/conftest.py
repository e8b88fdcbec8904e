import os
import pathlib

import numpy as np
import pytest

REPO = pathlib.Path(__file__).resolve().parent.parent
os.environ.setdefault("CAMFOREST_DATA_DIR", str(REPO / "data"))

from camforest import prepared  # noqa: E402


@pytest.fixture(scope="session")
def iris_splits():
    return prepared("iris", test_fraction=0.2, seed=0)


@pytest.fixture(scope="session")
def wdbc_splits():
    return prepared("wdbc", test_fraction=0.25, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
