import numpy as np
import pytest

from rebkyle.model import ModelParams
from rebkyle.solver import SolverConfig, shoot

BASELINE = ModelParams(n_periods=10, sigma_v_sq=1.0, sigma_a_sq=1.0,
                       sigma_w_sq=4.0, rho=0.0)

_cache = {}


def solve_cached(params: ModelParams, cfg: SolverConfig = None):
    """Solve once per parameterization for the whole session."""
    key = (params, cfg)
    if key not in _cache:
        _cache[key] = shoot(params, cfg or SolverConfig())
    return _cache[key]


@pytest.fixture(scope="session")
def baseline_sol():
    return solve_cached(BASELINE)


@pytest.fixture(scope="session")
def small_sol():
    return solve_cached(ModelParams(4, 1.0, 1.0, 4.0, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
