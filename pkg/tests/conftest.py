import os
from pathlib import Path

import numpy as np
import pytest

# Antes de importar core: los singletons leen el entorno al crearse
os.environ.setdefault("LOG_LEVEL", "WARNING")

from core.dynamics import ExperimentConstants, QubitRates  # noqa: E402
from core.energetics import PulseSetup  # noqa: E402

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = REPO_ROOT / "config"


@pytest.fixture
def constants():
    return ExperimentConstants()


@pytest.fixture
def rates(constants):
    return QubitRates.from_constants(constants)


@pytest.fixture
def ideal_rates():
    return QubitRates.ideal()


@pytest.fixture
def setup(constants):
    return PulseSetup.from_constants(constants)


@pytest.fixture
def ideal_setup(constants):
    return PulseSetup(gamma_a=constants.gamma_a, t_d=constants.t_d, w=constants.w)


@pytest.fixture
def unit_fidelity_setup(constants):
    return PulseSetup(gamma_a=constants.gamma_a, t_d=constants.t_d, w=constants.w,
                      p_e_initial=constants.p_e_th)


@pytest.fixture
def gamma_a_t_d(constants):
    return constants.gamma_a * constants.t_d


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def config_dir():
    return CONFIG_DIR
