"""End-to-end acceptance gate.

Each test pins one advertised property of the engine at its stated tolerance:
convergence of the baseline solve, structural facts of the last trading
round, equivalence with the exact Gaussian-projection oracle, reduction to
the single-insider benchmark, closed-form consistency of the per-period
optimizers and value recursions, Monte Carlo agreement, absence of
profitable one-coefficient deviations, the qualitative figure shapes, gauge
invariance, and the reference parameter sweeps.
"""
import dataclasses
import time

import numpy as np
import pytest

import oracles
from conftest import BASELINE, solve_cached
from rebkyle.cli import check_s_shape, check_u_shape
from rebkyle.kernels import simulate_paths
from rebkyle.model import ModelParams, initial_moments
from rebkyle.oracle import verify_filtering
from rebkyle.recursions import (insider_foc, insider_vf_recursion,
                                rebalancer_foc, rebalancer_vf_recursion,
                                second_order_checks)
from rebkyle.model import InsiderValueCoeffs, RebalancerValueCoeffs
from rebkyle.simulator import (SimulationConfig, deviation_test,
                               draw_primitives, figure_statistics,
                               gauge_rescale, order_flow_predictability,
                               simulate)
from rebkyle.solver import SolverConfig, kyle_benchmark, shoot


# -- 1: baseline convergence ------------------------------------------------

def test_baseline_solve_converges_fast():
    t0 = time.time()
    sol = shoot(BASELINE, SolverConfig())
    elapsed = time.time() - t0
    assert sol.residual_norm < 1e-10
    assert sol.diagnostics["time0_mismatch"] < 1e-6
    assert elapsed < 10.0


# -- 2: terminal-round structure --------------------------------------------

SOLVED_SET = [
    BASELINE,
    ModelParams(10, 1.0, 0.48, 4.0, 0.0),
    ModelParams(10, 1.0, 3.7, 4.0, 0.0),
    ModelParams(10, 1.0, 1.0, 4.0, 0.25),
    ModelParams(10, 1.0, 1.0, 4.0, 0.5),
    ModelParams(4, 1.0, 1.0, 4.0, 0.0),
]


@pytest.mark.parametrize("params", SOLVED_SET, ids=str)
def test_terminal_round_facts(params):
    sol = solve_cached(params)
    last = sol.steps[-1]
    assert last.r == 0.0
    assert last.s == -1.0
    assert last.mu == -last.lam
    assert last.lam > 0.0
    assert last.beta_r == 1.0
    assert last.alpha_r == 0.0
    final = sol.moments[-1]
    assert abs(final.sigma1) < 1e-12
    assert abs(final.sigma3) < 1e-12
    s2 = [m.sigma2 for m in sol.moments]
    assert np.all(np.diff(s2) <= 1e-12)


# -- 3: exact-projection oracle equivalence ---------------------------------

@pytest.mark.parametrize("n", [1, 2, 3, 4, 8])
def test_solution_matches_gaussian_projection(n):
    sol = solve_cached(ModelParams(n, 1.0, 1.0, 4.0, 0.0))
    rep = verify_filtering(sol, threshold=1e-9)
    assert rep["passed"], rep


def test_projection_oracle_detects_broken_price_impact():
    sol = solve_cached(ModelParams(8, 1.0, 1.0, 4.0, 0.0))
    steps = list(sol.steps)
    steps[4] = dataclasses.replace(steps[4], lam=steps[4].lam * 1.01)
    broken = dataclasses.replace(sol, steps=tuple(steps))
    rep = verify_filtering(broken)
    assert max(c["max_deviation"] for c in rep["checks"]) > 1e-4


# -- 4: single-insider benchmark limit --------------------------------------

def test_vanishing_target_reduces_to_benchmark():
    p = ModelParams(10, 1.0, 1e-8, 4.0, 0.0)
    sol = solve_cached(p)
    kb = kyle_benchmark(p)
    lam = np.array([st.lam for st in sol.steps])
    s2 = np.array([m.sigma2 for m in sol.moments])
    assert np.max(np.abs(lam / kb["lam"] - 1)) < 1e-3
    assert np.max(np.abs(s2 / kb["sigma2"] - 1)) < 1e-3


def test_single_round_closed_form():
    for sv2, sa2, sw2 in [(1.0, 1.0, 4.0), (2.0, 0.5, 1.0)]:
        sol = solve_cached(ModelParams(1, sv2, sa2, sw2, 0.0))
        ref = 0.5 * np.sqrt(sv2 / (sa2 + sw2))
        assert abs(sol.steps[0].lam - ref) < 1e-10


# -- 5: optimizers and recursions against brute force -----------------------

def test_first_order_coefficients_match_brute_force(rng):
    n_ok = 0
    worst = 0.0
    while n_ok < 100:
        lam = rng.uniform(0.05, 1.0)
        r = rng.uniform(-0.5, 0.5)
        b_r = rng.uniform(-0.5, 1.2)
        vf_i = InsiderValueCoeffs(0.0, *rng.uniform(-1, 1, 3))
        a_r = rng.uniform(-0.5, 0.5)
        b_i = rng.uniform(-0.5, 1.5)
        vf_r = RebalancerValueCoeffs(0.0, *rng.uniform(-1, 1, 6))
        ok_i, ok_r, _ = second_order_checks(lam, r, vf_i, vf_r)
        if not (ok_i and ok_r):
            continue
        n_ok += 1
        g = insider_foc(lam, r, b_r, vf_i)
        T = oracles.insider_objective_matrix(lam, r, b_r, *vf_i.as_tuple())
        ref = oracles.fit_linear_policy(T, 2, rng)
        worst = max(worst, abs(g[0] - ref[0]), abs(g[1] - ref[1]))
        d = rebalancer_foc(lam, r, a_r, b_r, b_i, vf_r)
        T = oracles.rebalancer_objective_matrix(lam, r, a_r, b_r, b_i,
                                                vf_r.as_tuple())
        ref = oracles.fit_linear_policy(T, 3, rng)
        worst = max(worst, *(abs(x - y) for x, y in zip(d, ref)))
    assert worst < 1e-9


def test_value_recursions_match_surface_fits(rng):
    n_ok = 0
    worst = 0.0
    while n_ok < 100:
        lam = rng.uniform(0.05, 1.0)
        r = rng.uniform(-0.5, 0.5)
        b_r = rng.uniform(-0.5, 1.2)
        vf_i = InsiderValueCoeffs(0.0, *rng.uniform(-1, 1, 3))
        a_r = rng.uniform(-0.5, 0.5)
        b_i = rng.uniform(-0.5, 1.5)
        vf_r = RebalancerValueCoeffs(0.0, *rng.uniform(-1, 1, 6))
        ok_i, ok_r, _ = second_order_checks(lam, r, vf_i, vf_r)
        if not (ok_i and ok_r):
            continue
        n_ok += 1
        prev = insider_vf_recursion(lam, r, b_r, vf_i, 0.0, 0.0)
        fit = oracles.fit_quadratic_value(
            oracles.insider_objective_matrix(lam, r, b_r, *vf_i.as_tuple()),
            2, rng)
        worst = max(worst, abs(prev.i11 - fit["00"]),
                    abs(prev.i12 - fit["01"]), abs(prev.i22 - fit["11"]))
        prev_r = rebalancer_vf_recursion(lam, r, a_r, b_i, b_r, vf_r, 0.0, 0.0)
        fit = oracles.fit_quadratic_value(
            oracles.rebalancer_objective_matrix(lam, r, a_r, b_r, b_i,
                                                vf_r.as_tuple()), 3, rng)
        worst = max(worst,
                    abs(prev_r.l11 - fit["00"]), abs(prev_r.l12 - fit["01"]),
                    abs(prev_r.l13 - fit["02"]), abs(prev_r.l22 - fit["11"]),
                    abs(prev_r.l23 - fit["12"]), abs(prev_r.l33 - fit["22"]))
    assert worst < 1e-9


# -- 6: Monte Carlo consistency ---------------------------------------------

def test_monte_carlo_matches_solved_moments():
    sol = solve_cached(BASELINE)
    t0 = time.time()
    stats = simulate(sol, SimulationConfig(n_paths=100_000, seed=101))
    mc = stats.per_period["moment_check"]
    for sim, se, ref in (("var_gap", "se_var_gap", "solved_sigma1"),
                         ("var_mispricing", "se_var_mispricing",
                          "solved_sigma2"),
                         ("cov", "se_cov", "solved_sigma3")):
        d = np.abs(np.array(mc[sim]) - np.array(mc[ref]))
        assert np.all(d <= 3 * np.array(mc[se]) + 1e-12), (sim, d)
    assert stats.scalars["terminal_holding_max_error"] < 1e-13
    rep = order_flow_predictability(sol,
                                    SimulationConfig(n_paths=100_000, seed=102))
    for row in rep["rows"]:
        assert abs(row["slope"] - row["reference"]) <= 3 * row["slope_se"], row
    assert time.time() - t0 < 60.0


# -- 7: no profitable one-coefficient deviation -----------------------------

DEVIATIONS = [("insider", 5, "beta_i"), ("insider", 1, "beta_i"),
              ("rebalancer", 3, "beta_r"), ("rebalancer", 3, "alpha_r")]


@pytest.mark.parametrize("agent,period,coeff", DEVIATIONS)
def test_no_profitable_deviation(agent, period, coeff):
    sol = solve_cached(BASELINE)
    base = sol.coefficient_arrays()[coeff][period - 1]
    eps = 0.05 * abs(base)
    assert eps > 0
    for sign in (+1, -1):
        cfg = SimulationConfig(n_paths=1_000_000, seed=707,
                               perturbation=(agent, period, coeff, sign * eps))
        rep = deviation_test(sol, cfg)
        assert not rep["profitable_beyond_3se"], rep


# -- 8: qualitative figure shapes -------------------------------------------

@pytest.fixture(scope="module")
def baseline_bundle():
    sol = solve_cached(BASELINE)
    return figure_statistics(sol, SimulationConfig(n_paths=50_000, seed=303))


def test_price_impact_s_shape(baseline_bundle):
    b = baseline_bundle
    assert check_s_shape(b["price_impact"]["model"],
                         b["price_impact"]["benchmark"])


def test_rebalancer_mean_trades_u_shape(baseline_bundle):
    assert check_u_shape(
        baseline_bundle["rebalancer_conditional_mean_trades"]["dth_r"])


def test_insider_mean_trades_slight_u_shape(baseline_bundle):
    assert check_u_shape(
        baseline_bundle["insider_conditional_mean_trades"]["dth_i"],
        strict_last=False)


def test_late_day_trade_correlation_negative(baseline_bundle):
    corr = np.asarray(baseline_bundle["trade_correlation"]["exact"])
    n = corr.size
    assert np.all(corr[-(n // 3):] < 0)


def test_market_maker_predictable_fraction_small(baseline_bundle):
    fr = baseline_bundle["predictable_fractions"]["exact"]["mm_fraction"]
    assert np.all(np.abs(np.asarray(fr[:-1])) < 0.05)


# -- 9: gauge invariance ----------------------------------------------------

@pytest.mark.parametrize("x", [0.5, 2.0, 10.0])
def test_gauge_rescaling_leaves_observables_unchanged(x):
    sol = solve_cached(BASELINE)
    cfg = SimulationConfig(n_paths=1000, seed=55)
    v, a, dw = draw_primitives(sol, cfg, np.random.default_rng(cfg.seed),
                               cfg.n_paths)
    base = {k: np.array(vv) for k, vv in sol.coefficient_arrays().items()}
    ref = simulate_paths(base["lam"], base["mu"], base["r"], base["s"],
                         base["beta_i"], base["beta_r"], base["alpha_r"],
                         v, a, dw, backend="numpy")
    g = gauge_rescale(sol, x)
    out = simulate_paths(g["lam"], g["mu"], g["r"], g["s"], g["beta_i"],
                         g["beta_r"], g["alpha_r"], v, a, dw, backend="numpy")
    assert np.max(np.abs(out[2] - ref[2])) < 1e-12   # order flow
    assert np.max(np.abs(out[3] - ref[3])) < 1e-12   # prices


# -- 10: reference parameter sweeps -----------------------------------------

SWEEP = [ModelParams(10, 1.0, 0.48, 4.0, 0.0),
         ModelParams(10, 1.0, 1.0, 4.0, 0.0),
         ModelParams(10, 1.0, 3.7, 4.0, 0.0),
         ModelParams(10, 1.0, 1.0, 4.0, 0.25),
         ModelParams(10, 1.0, 1.0, 4.0, 0.5)]


@pytest.mark.parametrize("params", SWEEP, ids=str)
def test_sweep_member_converges(params):
    sol = solve_cached(params)
    assert sol.residual_norm < 1e-10
    assert sol.diagnostics["time0_mismatch"] < 1e-6
    m0 = sol.moments[0]
    t = initial_moments(params)
    assert m0.sigma3 == pytest.approx(t.sigma3, abs=1e-6)


def test_high_target_variance_price_impact_non_monotone():
    sol = solve_cached(ModelParams(10, 1.0, 3.7, 4.0, 0.0))
    lam = np.array([st.lam for st in sol.steps])
    assert np.any(np.diff(lam) > 0)
    assert np.any(np.diff(lam) < 0)
