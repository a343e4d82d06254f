import os
import tempfile

# лог и конфиг тестов пишутся во временный каталог; задать до импорта core.config
os.environ.setdefault("MLMC_SDDE_HOME", tempfile.mkdtemp(prefix="mlmc_sdde_tests_"))

import numpy as np
import pytest

from core.problems import builtin_payoff, builtin_problem


@pytest.fixture
def linear():
    return builtin_problem("linear_scalar")


@pytest.fixture
def cubic():
    return builtin_problem("cubic_onesided")


@pytest.fixture
def zero():
    return builtin_problem("zero_dynamics")


@pytest.fixture
def sigmoid():
    return builtin_payoff("sigmoid")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
