import os

import numpy as np
import pytest

# share Green tables with spawned experiment workers across the whole run
_CACHE = os.path.join(os.path.dirname(__file__), "..", "acceptance_out", "green_cache")
os.environ.setdefault("BRWLAB_CACHE_DIR", _CACHE)

from brwlab.green import build_green_table  # noqa: E402


@pytest.fixture(scope="session")
def table3():
    return build_green_table(3)


@pytest.fixture(scope="session")
def table4():
    return build_green_table(4)


@pytest.fixture(scope="session")
def table5():
    return build_green_table(5)


@pytest.fixture(scope="session")
def tables(table3, table4, table5):
    return {3: table3, 4: table4, 5: table5}


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)
