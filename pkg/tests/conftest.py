import numpy as np
import pytest

from fsicontrol.config import TINY_2D, build_problem, load_config_text
from fsicontrol.fem import NCOMP


@pytest.fixture(scope="session")
def tiny_problem():
    """Stiff tiny scenario, degree 1, single level, nonlinear physics."""
    return build_problem(load_config_text(TINY_2D))


@pytest.fixture(scope="session")
def tiny_problem_2l():
    cfg = load_config_text(TINY_2D)
    cfg.n_levels = 2
    return build_problem(cfg)


@pytest.fixture(scope="session")
def linear_problem():
    """Tiny scenario with all geometric couplings removed: Stokes plus a
    linear solid, so the step residual is affine in the state."""
    cfg = load_config_text(TINY_2D)
    cfg.flags.ale_coupling = False
    cfg.flags.convection = False
    cfg.flags.solid_model = "linear"
    cfg.solver.gmres_tol = 1e-9
    return build_problem(cfg)


def random_state(lv, rng, scale=1e-2):
    U = scale * rng.standard_normal((lv.n_nodes, NCOMP))
    lv.impose_bcs(U, None)
    return U


def random_direction(lv, rng):
    d = rng.standard_normal((lv.n_nodes, NCOMP))
    d.reshape(-1)[~lv.free5_flat] = 0.0
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
