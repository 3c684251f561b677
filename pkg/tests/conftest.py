import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from memkernel.superop import Superoperator
from memkernel.sysenv import ModelSpec, Oracle

settings.register_profile("memkernel", deadline=None, max_examples=25)
settings.load_profile("memkernel")

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_cptp(rng, d=2, rank=3):
    g = rng.normal(size=(rank * d, d)) + 1j * rng.normal(size=(rank * d, d))
    q, _ = np.linalg.qr(g)
    return Superoperator.from_kraus([q[i * d:(i + 1) * d] for i in range(rank)])


def random_cp(rng, d=2, rank=2):
    ks = [rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(rank)]
    return Superoperator.from_kraus([k / (2 * np.sqrt(rank)) for k in ks])


def random_density(rng, d=2):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def random_hermitian(rng, d=2):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return g + g.conj().T


ONE_MODE = ModelSpec(alpha=0.3, omega_c=2.0, kT=0.5, num_modes=1, fock_cutoff=4, omega_max=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def one_mode():
    return Oracle(ONE_MODE, 0.1)


@pytest.fixture(scope="session")
def decoupled():
    return Oracle(ModelSpec(alpha=0.0, num_modes=1, fock_cutoff=2), 0.1)
