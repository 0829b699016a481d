from __future__ import annotations

import numpy as np
import pytest

from fpsisplit.driver import InitialData, RunConfig, discretization
from fpsisplit.mesh import build_annulus_mesh, build_disk_mesh, build_interface_grid

SMALL = InitialData(eta_radial=0.05, eta_shear=0.03, xi_rotation=0.2, u_swirl=0.3, p_amplitude=0.1)


@pytest.fixture(scope="session")
def coarse_config() -> RunConfig:
    return RunConfig(dt=0.01, T=0.05, delta=0.25, n_refine=1, M=32, K=8, initial=SMALL)


@pytest.fixture(scope="session")
def tiny_config() -> RunConfig:
    return RunConfig(dt=0.02, T=0.06, delta=0.4, n_refine=0, M=16, K=4, initial=SMALL)


@pytest.fixture(scope="session")
def coarse_disc(coarse_config):
    c = coarse_config
    return discretization(c.n_refine, c.M, c.K, c.delta)


@pytest.fixture(scope="session")
def disk2():
    return build_disk_mesh(2)


@pytest.fixture(scope="session")
def annulus2():
    return build_annulus_mesh(2)


@pytest.fixture(scope="session")
def grid64():
    return build_interface_grid(64, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
