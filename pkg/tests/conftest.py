import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from core.lindblad import spectral_decompose  # noqa: E402
from core.models import ChainParams, TFIMParams  # noqa: E402
from core.systems import build_chain, build_tfim  # noqa: E402

QUBIT = ChainParams(N=1, E=1.0, gamma0=0.3, gamma1=0.7)


@pytest.fixture(scope="session")
def qubit_model():
    return build_chain(QUBIT)


@pytest.fixture(scope="session")
def qubit(qubit_model):
    return spectral_decompose(qubit_model)


@pytest.fixture(scope="session")
def tfim_model():
    return build_tfim(TFIMParams(N=2, J=1.0, g=0.7, beta=1.0, gamma=0.5))


@pytest.fixture(scope="session")
def tfim(tfim_model):
    return spectral_decompose(tfim_model)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_density(rng, d):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real
