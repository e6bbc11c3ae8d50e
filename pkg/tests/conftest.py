import os

import numpy as np
import pytest

from boundlab.design import build_tv_system

WORKERS = min(2, os.cpu_count() or 1)


@pytest.fixture(scope="session")
def tv_8_4():
    return build_tv_system(8, 4)


@pytest.fixture(scope="session")
def tv_256_16():
    return build_tv_system(256, 16)


@pytest.fixture(scope="session")
def tv_256_32():
    return build_tv_system(256, 32)


@pytest.fixture()
def rng():
    # function-scoped: every test sees the same deterministic stream,
    # independent of execution order
    return np.random.default_rng(20240817)
