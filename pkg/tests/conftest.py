import numpy as np
import pytest

from hybrid_ris_isac.channels import generate_channels
from hybrid_ris_isac.config import SystemConfig


@pytest.fixture(scope="session")
def small_cfg():
    """4-element RIS scenario: every stage solves in milliseconds."""
    return SystemConfig(M=4, Nx=2, Ny=2, K=2, L=2)


@pytest.fixture(scope="session")
def small_channels(small_cfg):
    return generate_channels(small_cfg, seed=7)


@pytest.fixture(scope="session")
def tiny_cfg():
    """The enumeration-oracle instance: M=2, N=2, K=1, L=1."""
    return SystemConfig(M=2, Nx=2, Ny=1, K=1, L=1)


@pytest.fixture(scope="session")
def default_cfg():
    return SystemConfig()


def random_ris(cfg, seed, n_active=None, beta_high=None):
    """A random valid RIS state used across the stage tests."""
    rng = np.random.default_rng(seed)
    q = np.zeros(cfg.N)
    if n_active is None:
        n_active = int(rng.integers(0, cfg.N + 1))
    act = rng.permutation(cfg.N)[:n_active]
    q[act] = 1.0
    beta = np.ones(cfg.N)
    hi = beta_high if beta_high is not None else cfg.beta_max
    beta[act] = rng.uniform(0.0, hi, n_active)
    theta = rng.uniform(0.0, 2 * np.pi, cfg.N)
    theta[theta == 0.0] = 2 * np.pi
    from hybrid_ris_isac.channels import RisConfiguration

    return RisConfiguration(q=q, beta=beta, theta=theta)
