import dataclasses

import numpy as np
import pytest

from conftest import solve_cached
from rebkyle.model import ModelParams
from rebkyle.oracle import (build_state_map, primitive_covariance,
                            state_covariance, verify_filtering,
                            verify_private_filters)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 8])
def test_filtering_matches_projection(n):
    sol = solve_cached(ModelParams(n, 1.0, 1.0, 4.0, 0.0))
    rep = verify_filtering(sol)
    assert rep["passed"], rep
    for c in rep["checks"]:
        assert c["max_deviation"] < c["threshold"], c


def test_filtering_with_correlated_target():
    sol = solve_cached(ModelParams(6, 1.0, 1.0, 4.0, 0.5))
    assert verify_filtering(sol)["passed"]


def test_private_filters_use_pre_trade_ratios(baseline_sol):
    rep = verify_private_filters(baseline_sol)
    assert rep["passed"], rep
    assert rep["ratio_convention"]["matching"] == "pre_trade"


def test_negative_control_perturbed_lambda():
    """A 1% shift of one period's price impact must be flagged well above
    the verification threshold."""
    sol = solve_cached(ModelParams(8, 1.0, 1.0, 4.0, 0.0))
    steps = list(sol.steps)
    bad = dataclasses.replace(steps[4], lam=steps[4].lam * 1.01)
    steps[4] = bad
    broken = dataclasses.replace(sol, steps=tuple(steps))
    rep = verify_filtering(broken)
    worst = max(c["max_deviation"] for c in rep["checks"])
    assert not rep["passed"]
    assert worst > 1e-4


def test_state_map_linearity(baseline_sol):
    """Simulating one path must equal applying the state map to its
    primitive vector."""
    m = build_state_map(baseline_sol)
    rng = np.random.default_rng(5)
    z = rng.standard_normal(m.dim)
    from rebkyle.kernels import simulate_paths
    c = {k: np.array(v) for k, v in baseline_sol.coefficient_arrays().items()}
    n = baseline_sol.n_periods
    dw = z[2:] * np.sqrt(baseline_sol.params.sigma_w_sq_delta) * 0 + z[2:]
    dth_i, dth_r, y, p, q = simulate_paths(
        c["lam"], c["mu"], c["r"], c["s"], c["beta_i"], c["beta_r"],
        c["alpha_r"], z[:1], z[1:2], dw[None, :], backend="numpy")
    assert np.allclose(p[0], m.p[1:] @ z, atol=1e-12)
    assert np.allclose(q[0], m.q[1:] @ z, atol=1e-12)
    assert np.allclose(y[0], m.y @ z, atol=1e-12)


def test_primitive_covariance_structure():
    p = ModelParams(4, 2.0, 3.0, 4.0, 0.5)
    sol = solve_cached(ModelParams(4, 1.0, 1.0, 4.0, 0.0))
    C = primitive_covariance(dataclasses.replace(sol, params=p))
    assert C.shape == (6, 6)
    assert C[0, 0] == 2.0
    assert C[1, 1] == 3.0
    assert C[0, 1] == pytest.approx(0.5 * np.sqrt(6.0))
    assert np.all(np.diag(C)[2:] == p.sigma_w_sq_delta)
    assert np.all(np.linalg.eigvalsh(C) >= -1e-12)


def test_state_covariance_psd(baseline_sol):
    m = build_state_map(baseline_sol)
    cov = state_covariance(baseline_sol, m.y)
    assert np.all(np.linalg.eigvalsh(cov) > 0)
