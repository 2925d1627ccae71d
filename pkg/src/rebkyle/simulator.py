"""Seeded Monte Carlo engine: path generation, ensemble statistics, exact
linear-propagation moments, order-flow predictability regressions, order
decompositions, unilateral-deviation tests, and figure-data bundles.

Randomness discipline: a single generator seeded from the config drives each
run, so a given (seed, n_paths, chunk_size) triple is exactly reproducible.
Paired comparisons reuse identical draws within each chunk, which makes the
difference estimator exact regardless of chunk boundaries.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParam
from .kernels import simulate_paths
from .model import EquilibriumSolution
from .oracle import build_state_map, state_covariance
from .solver import kyle_benchmark


@dataclass(frozen=True)
class SimulationConfig:
    """Monte Carlo run description.

    conditioning optionally pins the value and/or the target: e.g.
    ``{"v": 1.0}``; the remaining primitives are drawn from their conditional
    Gaussian laws.  perturbation is ``(agent, period, coefficient, offset)``
    with agent in {"insider", "rebalancer"}, period 1-based, and coefficient
    one of beta_i / beta_r / alpha_r; it shifts that one strategy constant for
    deviation tests.
    """

    n_paths: int = 100_000
    seed: int = 0
    conditioning: dict = None
    perturbation: tuple = None

    def validate(self):
        if self.n_paths < 1:
            raise InvalidParam("n_paths", "must be >= 1")
        if self.conditioning:
            for k, v in self.conditioning.items():
                if k not in ("v", "a"):
                    raise InvalidParam("conditioning", f"unknown key {k!r}")
                if not np.isfinite(v):
                    raise InvalidParam("conditioning", f"non-finite value for {k!r}")
        return self


@dataclass
class EnsembleStats:
    """Per-period means/standard deviations with standard errors, plus scalar
    summaries; JSON-ready via ``to_dict``."""

    n_paths: int
    seed: int
    per_period: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "kind": "ensemble_stats",
            "n_paths": self.n_paths,
            "seed": self.seed,
            "per_period": self.per_period,
            "scalars": self.scalars,
        }


def _coefficient_arrays(sol: EquilibriumSolution, perturbation=None):
    arr = {k: np.array(v) for k, v in sol.coefficient_arrays().items()}
    if perturbation is not None:
        agent, period, coeff, offset = perturbation
        n = sol.n_periods
        if not 1 <= period <= n:
            raise InvalidParam("perturbation", f"period {period} out of range")
        allowed = {"insider": ("beta_i",), "rebalancer": ("beta_r", "alpha_r")}
        if agent not in allowed:
            raise InvalidParam("perturbation", f"unknown agent {agent!r}")
        if coeff not in allowed[agent]:
            raise InvalidParam("perturbation", f"{agent} cannot shift {coeff!r}")
        if agent == "rebalancer" and period == n:
            raise InvalidParam(
                "perturbation",
                "terminal rebalancer trade is pinned by the target constraint")
        arr[coeff] = arr[coeff].copy()
        arr[coeff][period - 1] += offset
    return arr


def draw_primitives(sol: EquilibriumSolution, cfg: SimulationConfig, rng,
                    n_paths):
    """Draw (v, a, dw) honoring any conditioning in the config."""
    p = sol.params
    sv = np.sqrt(p.sigma_v_sq)
    sa = np.sqrt(p.sigma_a_sq)
    cond = cfg.conditioning or {}
    if "v" in cond and "a" in cond:
        v = np.full(n_paths, float(cond["v"]))
        a = np.full(n_paths, float(cond["a"]))
    elif "v" in cond:
        v = np.full(n_paths, float(cond["v"]))
        mean_a = p.rho * sa / sv * v
        std_a = sa * np.sqrt(1 - p.rho**2)
        a = mean_a + std_a * rng.standard_normal(n_paths)
    elif "a" in cond:
        a = np.full(n_paths, float(cond["a"]))
        mean_v = p.rho * sv / sa * a
        std_v = sv * np.sqrt(1 - p.rho**2)
        v = mean_v + std_v * rng.standard_normal(n_paths)
    else:
        z1 = rng.standard_normal(n_paths)
        z2 = rng.standard_normal(n_paths)
        v = sv * z1
        a = sa * (p.rho * z1 + np.sqrt(1 - p.rho**2) * z2)
    dw = np.sqrt(p.sigma_w_sq_delta) * rng.standard_normal((n_paths, p.n_periods))
    return v, a, dw


def run_paths(sol: EquilibriumSolution, cfg: SimulationConfig, rng=None,
              n_paths=None, coeffs=None):
    """Generate one batch of paths; returns a dict of arrays."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if n_paths is None:
        n_paths = cfg.n_paths
    if coeffs is None:
        coeffs = _coefficient_arrays(sol, cfg.perturbation)
    v, a, dw = draw_primitives(sol, cfg, rng, n_paths)
    dth_i, dth_r, y, p, q = simulate_paths(
        coeffs["lam"], coeffs["mu"], coeffs["r"], coeffs["s"],
        coeffs["beta_i"], coeffs["beta_r"], coeffs["alpha_r"], v, a, dw)
    th_r = np.cumsum(dth_r, axis=1)
    p_prev = np.concatenate([np.zeros((n_paths, 1)), p[:, :-1]], axis=1)
    dp = p - p_prev
    insider_profit = ((v[:, None] - p) * dth_i).sum(axis=1)
    rebalancer_objective = -((a[:, None] - np.concatenate(
        [np.zeros((n_paths, 1)), th_r[:, :-1]], axis=1)) * dp).sum(axis=1)
    return {"v": v, "a": a, "dw": dw, "dth_i": dth_i, "dth_r": dth_r,
            "y": y, "p": p, "q": q, "th_r": th_r, "dp": dp,
            "insider_profit": insider_profit,
            "rebalancer_objective": rebalancer_objective}


def _mean_se(x, axis=0):
    n = x.shape[axis]
    m = x.mean(axis=axis)
    se = x.std(axis=axis, ddof=1) / np.sqrt(n)
    return m, se


def simulate(sol: EquilibriumSolution, cfg: SimulationConfig,
             return_paths=False):
    """Run the Monte Carlo ensemble and summarize it.

    The summary includes the moment-consistency comparisons (simulated
    variance of mispricing, of the private gap, and their covariance, against
    the solved per-period moments with standard errors).
    """
    cfg.validate()
    paths = run_paths(sol, cfg)
    n_paths = cfg.n_paths
    stats = EnsembleStats(n_paths=n_paths, seed=cfg.seed)
    v, a = paths["v"], paths["a"]
    for name in ("dth_i", "dth_r", "y", "p", "q", "dp"):
        m, se = _mean_se(paths[name])
        stats.per_period[name] = {
            "mean": m.tolist(),
            "se_mean": se.tolist(),
            "std": paths[name].std(axis=0, ddof=1).tolist(),
        }
    mis = v[:, None] - paths["p"]
    gap = a[:, None] - paths["th_r"] - paths["q"]
    var_mis = mis.var(axis=0, ddof=1)
    var_gap = gap.var(axis=0, ddof=1)
    cov_gm = ((gap - gap.mean(axis=0)) * (mis - mis.mean(axis=0))).sum(axis=0) / (n_paths - 1)
    # Gaussian-theory standard errors of second-moment estimators
    se_var_mis = var_mis * np.sqrt(2.0 / (n_paths - 1))
    se_var_gap = var_gap * np.sqrt(2.0 / (n_paths - 1))
    se_cov = np.sqrt((var_gap * var_mis + cov_gm**2) / (n_paths - 1))
    mom = np.array([m.as_tuple() for m in sol.moments[1:]])
    stats.per_period["moment_check"] = {
        "var_gap": var_gap.tolist(), "se_var_gap": se_var_gap.tolist(),
        "var_mispricing": var_mis.tolist(), "se_var_mispricing": se_var_mis.tolist(),
        "cov": cov_gm.tolist(), "se_cov": se_cov.tolist(),
        "solved_sigma1": mom[:, 0].tolist(),
        "solved_sigma2": mom[:, 1].tolist(),
        "solved_sigma3": mom[:, 2].tolist(),
    }
    ip_m, ip_se = _mean_se(paths["insider_profit"])
    ro_m, ro_se = _mean_se(paths["rebalancer_objective"])
    stats.scalars.update({
        "insider_profit_mean": float(ip_m),
        "insider_profit_se": float(ip_se),
        "rebalancer_objective_mean": float(ro_m),
        "rebalancer_objective_se": float(ro_se),
        "terminal_holding_max_error": float(
            np.max(np.abs(paths["th_r"][:, -1] - a))),
    })
    if return_paths:
        return stats, paths
    return stats


def exact_conditional_means(sol: EquilibriumSolution, condition_on: str,
                            value: float):
    """Exact per-period mean trajectories given one pinned primitive.

    The dynamics are linear, so conditional means follow the same recursion
    applied to the conditional means of the primitives (no sampling).
    """
    p = sol.params
    sv = np.sqrt(p.sigma_v_sq)
    sa = np.sqrt(p.sigma_a_sq)
    if condition_on == "v":
        v0, a0 = float(value), p.rho * sa / sv * float(value)
    elif condition_on == "a":
        a0, v0 = float(value), p.rho * sv / sa * float(value)
    else:
        raise InvalidParam("condition_on", f"must be 'v' or 'a', got {condition_on!r}")
    c = {k: np.array(vv) for k, vv in sol.coefficient_arrays().items()}
    dth_i, dth_r, y, pr, q = simulate_paths(
        c["lam"], c["mu"], c["r"], c["s"], c["beta_i"], c["beta_r"],
        c["alpha_r"], np.array([v0]), np.array([a0]),
        np.zeros((1, p.n_periods)), backend="numpy")
    return {
        "condition_on": condition_on,
        "value": float(value),
        "dth_i": dth_i[0].tolist(),
        "dth_r": dth_r[0].tolist(),
        "y": y[0].tolist(),
        "p": pr[0].tolist(),
        "q": q[0].tolist(),
    }


def order_flow_predictability(sol: EquilibriumSolution, cfg: SimulationConfig):
    """Per-period regression of the order flow on the lagged demand estimate.

    The slope should equal the sum of the rebalancer's two loadings; a second
    regression adds the lagged price to confirm it carries no extra
    predictive loading.
    """
    cfg.validate()
    paths = run_paths(sol, cfg)
    n = sol.n_periods
    c = sol.coefficient_arrays()
    rows = []
    for k in range(1, n):
        yk = paths["y"][:, k]
        qprev = paths["q"][:, k - 1]
        pprev = paths["p"][:, k - 1]
        vq = qprev.var(ddof=1)
        slope = np.cov(qprev, yk, ddof=1)[0, 1] / vq
        resid = yk - slope * qprev - (yk.mean() - slope * qprev.mean())
        se = np.sqrt(resid.var(ddof=2) / (vq * (cfg.n_paths - 1)))
        X = np.column_stack([np.ones_like(qprev), qprev, pprev])
        beta, *_ = np.linalg.lstsq(X, yk, rcond=None)
        r2 = yk - X @ beta
        covX = np.linalg.inv(X.T @ X)
        se_p = np.sqrt((r2 @ r2) / (cfg.n_paths - 3) * covX[2, 2])
        rows.append({
            "period": k + 1,
            "slope": float(slope),
            "slope_se": float(se),
            "reference": float(c["alpha_r"][k] + c["beta_r"][k]),
            "price_loading": float(beta[2]),
            "price_loading_se": float(se_p),
        })
    return {"kind": "order_flow_predictability", "n_paths": cfg.n_paths,
            "seed": cfg.seed, "rows": rows}


def exact_predictable_fractions(sol: EquilibriumSolution):
    """Deterministic predictable-order components, per unit of conditioning.

    By linearity the conditional mean of every state scales with the pinned
    primitive, so these series do not depend on any realization.  Per period:
    (a) the market-maker-predictable part of the rebalancer's mean order per
    unit target, (alpha + beta) * E[q | target = 1]; (b) the extra part the
    insider predicts per unit value, beta_r * (s3/s2) * E[value - price |
    value = 1].  Both are fractions of the unit total rebalancing order.
    """
    c = sol.coefficient_arrays()
    n = sol.n_periods
    cond_a = exact_conditional_means(sol, "a", 1.0)
    cond_v = exact_conditional_means(sol, "v", 1.0)
    q_a = [0.0] + cond_a["q"][:-1]
    p_v = [0.0] + cond_v["p"][:-1]
    mm = [(c["alpha_r"][k] + c["beta_r"][k]) * q_a[k] for k in range(n)]
    pre = sol.moments
    ins = [c["beta_r"][k] * (pre[k].sigma3 / pre[k].sigma2) * (1.0 - p_v[k])
           for k in range(n)]
    return {"mm_fraction": [float(x) for x in mm],
            "insider_extra_fraction": [float(x) for x in ins]}


def predictable_components(sol: EquilibriumSolution, cfg: SimulationConfig):
    """Decompose each agent's orders into predictable pieces.

    Per period: (a) the market-maker-predictable part of the rebalancer order
    (its loading on the public demand estimate), (b) the extra part the
    insider can predict from its private mispricing signal, (c) the part of
    the insider's order the rebalancer can predict from its private gap.
    The per-path fractions are ratios of mean absolute predictable part to
    mean absolute order; ``exact`` carries the realization-independent
    conditional-mean fractions from :func:`exact_predictable_fractions`.
    """
    cfg.validate()
    paths = run_paths(sol, cfg)
    n = sol.n_periods
    c = sol.coefficient_arrays()
    v, a = paths["v"], paths["a"]
    rows = []
    identity_err = 0.0
    for k in range(n):
        qprev = paths["q"][:, k - 1] if k > 0 else np.zeros(cfg.n_paths)
        pprev = paths["p"][:, k - 1] if k > 0 else np.zeros(cfg.n_paths)
        thprev = paths["th_r"][:, k - 1] if k > 0 else np.zeros(cfg.n_paths)
        pre = sol.moments[k]
        mm_part = (c["alpha_r"][k] + c["beta_r"][k]) * qprev
        ins_part = c["beta_r"][k] * (pre.sigma3 / pre.sigma2) * (v - pprev)
        reb_part = c["beta_i"][k] * (pre.sigma3 / pre.sigma1) * (a - thprev - qprev)
        dthr = paths["dth_r"][:, k]
        dthi = paths["dth_i"][:, k]
        recon = c["beta_r"][k] * (a - thprev - qprev) + mm_part
        identity_err = max(identity_err, float(np.max(np.abs(dthr - recon))))
        rows.append({
            "period": k + 1,
            "mm_predictable_fraction": float(np.mean(np.abs(mm_part))
                                             / np.mean(np.abs(dthr))),
            "insider_predictable_fraction": float(np.mean(np.abs(ins_part))
                                                  / np.mean(np.abs(dthr))),
            "rebalancer_predictable_fraction": float(np.mean(np.abs(reb_part))
                                                     / np.mean(np.abs(dthi))),
        })
    return {"kind": "predictable_components", "n_paths": cfg.n_paths,
            "seed": cfg.seed, "decomposition_identity_max_error": identity_err,
            "rows": rows, "exact": exact_predictable_fractions(sol)}


def deviation_test(sol: EquilibriumSolution, cfg: SimulationConfig,
                   chunk_size=200_000):
    """Paired-path comparison of an agent's mean objective under a one-period
    shift of one of its strategy constants against the solved strategy.

    Common random numbers: base and shifted runs consume identical draws, so
    the standard error applies to the paired difference.
    """
    cfg.validate()
    if cfg.perturbation is None:
        raise InvalidParam("perturbation", "deviation_test requires one")
    agent = cfg.perturbation[0]
    key = "insider_profit" if agent == "insider" else "rebalancer_objective"
    base_coeffs = _coefficient_arrays(sol, None)
    pert_coeffs = _coefficient_arrays(sol, cfg.perturbation)
    rng = np.random.default_rng(cfg.seed)
    remaining = cfg.n_paths
    s = s2 = 0.0
    sb = 0.0
    total = 0
    while remaining > 0:
        m = min(chunk_size, remaining)
        v, a, dw = draw_primitives(sol, cfg, rng, m)
        objs = []
        for coeffs in (base_coeffs, pert_coeffs):
            dth_i, dth_r, y, p, q = simulate_paths(
                coeffs["lam"], coeffs["mu"], coeffs["r"], coeffs["s"],
                coeffs["beta_i"], coeffs["beta_r"], coeffs["alpha_r"], v, a, dw)
            if key == "insider_profit":
                obj = ((v[:, None] - p) * dth_i).sum(axis=1)
            else:
                th_r = np.cumsum(dth_r, axis=1)
                p_prev = np.concatenate([np.zeros((m, 1)), p[:, :-1]], axis=1)
                held = a[:, None] - np.concatenate(
                    [np.zeros((m, 1)), th_r[:, :-1]], axis=1)
                obj = -(held * (p - p_prev)).sum(axis=1)
            objs.append(obj)
        d = objs[1] - objs[0]
        s += d.sum()
        s2 += (d * d).sum()
        sb += objs[0].sum()
        total += m
        remaining -= m
    mean_d = s / total
    var_d = max(s2 / total - mean_d**2, 0.0)
    se_d = np.sqrt(var_d / total)
    return {
        "kind": "deviation_test",
        "agent": agent,
        "perturbation": list(cfg.perturbation),
        "n_paths": total,
        "seed": cfg.seed,
        "base_objective_mean": float(sb / total),
        "objective_delta_mean": float(mean_d),
        "objective_delta_se": float(se_d),
        "profitable_beyond_3se": bool(mean_d > 3 * se_d),
    }


def gauge_rescale(sol: EquilibriumSolution, x: float):
    """Coefficient arrays under the demand-estimate rescaling gauge.

    Scaling the demand-estimate state by x multiplies its order-flow loading
    by x and divides the loadings on it (price drift and rebalancer) by x;
    the autoregressive coefficient multiplies the already-rescaled state and
    is unchanged.  Simulated order flow and prices are invariant.
    """
    c = {k: np.array(v) for k, v in sol.coefficient_arrays().items()}
    c["r"] = c["r"] * x
    c["mu"] = c["mu"] / x
    c["alpha_r"] = c["alpha_r"] / x
    return c


def figure_statistics(sol: EquilibriumSolution, cfg: SimulationConfig):
    """Per-figure data series: exact coefficient/moment trajectories, exact
    conditional means, exact second moments from linear propagation, and the
    Monte Carlo series that have no closed form, plus the single-insider
    benchmark comparison."""
    cfg.validate()
    n = sol.n_periods
    c = sol.coefficient_arrays()
    kb = kyle_benchmark(sol.params)
    m = build_state_map(sol)
    periods = list(range(1, n + 1))

    dp_rows = m.p[1:] - m.p[:-1]
    dp_rms_exact = np.sqrt(np.diag(state_covariance(sol, dp_rows)))
    ci = state_covariance(sol, np.vstack([m.dtheta_i, m.dtheta_r]))
    corr_exact = np.array([
        ci[k, n + k] / np.sqrt(ci[k, k] * ci[n + k, n + k]) for k in range(n)])

    stats, paths = simulate(sol, cfg, return_paths=True)
    dp = paths["dp"]
    dp_rms_mc = np.sqrt((dp**2).mean(axis=0))
    se_rms = dp_rms_mc * np.sqrt(0.5 / cfg.n_paths)
    corr_mc = np.array([
        np.corrcoef(paths["dth_i"][:, k], paths["dth_r"][:, k])[0, 1]
        for k in range(n)])

    cond_cfg = SimulationConfig(n_paths=cfg.n_paths, seed=cfg.seed + 1,
                                conditioning={"a": 1.0})
    cond_paths = run_paths(sol, cond_cfg)
    cond_std = cond_paths["dth_r"].std(axis=0, ddof=1)
    sample = cond_paths["dth_r"][:5]

    pred = predictable_components(sol, cfg)

    return {
        "kind": "figure_statistics",
        "seed": cfg.seed,
        "n_paths": cfg.n_paths,
        "periods": periods,
        "price_impact": {"model": c["lam"], "benchmark": kb["lam"].tolist()},
        "value_variance": {
            "model": [mm.sigma2 for mm in sol.moments],
            "benchmark": kb["sigma2"].tolist()},
        "insider_loading": {"model": c["beta_i"], "benchmark": kb["beta_i"].tolist()},
        "insider_conditional_mean_trades": exact_conditional_means(sol, "v", 1.0),
        "rebalancer_loadings": {"alpha_r": c["alpha_r"], "beta_r": c["beta_r"]},
        "rebalancer_conditional_mean_trades": exact_conditional_means(sol, "a", 1.0),
        "rebalancer_conditional_std": {
            "std": cond_std.tolist(),
            "sample_paths": sample.tolist()},
        "price_change_rms": {
            "exact": dp_rms_exact.tolist(),
            "mc": dp_rms_mc.tolist(),
            "mc_se": se_rms.tolist()},
        "predictable_fractions": pred,
        "trade_correlation": {
            "exact": corr_exact.tolist(),
            "mc": corr_mc.tolist()},
    }
