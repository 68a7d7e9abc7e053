import numpy as np
import pytest

from kittensim import (
    GaussianStateSpec,
    gaussian_state,
    loss_channel,
    photon_subtract,
    variance_from_db,
)

HD_ETA = 0.88


@pytest.fixture(scope="session")
def sqz_state():
    """Squeezed thermal state at the -2.0 / +2.4 dB working point."""
    spec = GaussianStateSpec(variance_from_db(-2.0), variance_from_db(2.4))
    return gaussian_state(spec, nmax=20)


@pytest.fixture(scope="session")
def kitten(sqz_state):
    rho, _ = photon_subtract(sqz_state)
    return rho


@pytest.fixture(scope="session")
def lossy_kitten(kitten):
    return loss_channel(kitten, HD_ETA)


def random_density_matrix(rng: np.random.Generator, dim: int):
    """Random full-rank density matrix (Ginibre construction)."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real
