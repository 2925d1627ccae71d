"""Exact joint-Gaussian verification engine.

Every state variable of the market is a linear function of the primitive
vector (value, target, per-round noise trades).  This module builds those
linear maps explicitly and then checks the model's filtering claims by dense
Gaussian projection: the price must be the conditional expectation of the
value given order-flow history, the demand estimate must be the conditional
expectation of the rebalancer's remaining gap, and the stored moment triples
must equal the exact conditional (co)variances.  Nothing here reuses the
recursion formulas, so agreement is a genuine cross-check.
"""
from __future__ import annotations

import numpy as np

from .errors import SingularCovariance
from .model import EquilibriumSolution


class LinearStateMap:
    """Per-period coefficient vectors over primitives z = (v, a, dw_1..dw_N).

    Each attribute is an array of shape (N + 1, N + 2); row n gives the state
    after round n (row 0 is the zero initial state).  ``y`` has shape
    (N, N + 2) with row n-1 for round n, as do the per-round trades.
    """

    def __init__(self, n_periods):
        dim = n_periods + 2
        self.n_periods = n_periods
        self.dim = dim
        self.p = np.zeros((n_periods + 1, dim))
        self.q = np.zeros((n_periods + 1, dim))
        self.theta_i = np.zeros((n_periods + 1, dim))
        self.theta_r = np.zeros((n_periods + 1, dim))
        self.y = np.zeros((n_periods, dim))
        self.dtheta_i = np.zeros((n_periods, dim))
        self.dtheta_r = np.zeros((n_periods, dim))

    def ev(self):
        e = np.zeros(self.dim)
        e[0] = 1.0
        return e

    def ea(self):
        e = np.zeros(self.dim)
        e[1] = 1.0
        return e


def primitive_covariance(sol: EquilibriumSolution) -> np.ndarray:
    p = sol.params
    dim = p.n_periods + 2
    C = np.zeros((dim, dim))
    C[0, 0] = p.sigma_v_sq
    C[1, 1] = p.sigma_a_sq
    C[0, 1] = C[1, 0] = p.rho * np.sqrt(p.sigma_v_sq * p.sigma_a_sq)
    for k in range(p.n_periods):
        C[2 + k, 2 + k] = p.sigma_w_sq_delta
    return C


def build_state_map(sol: EquilibriumSolution) -> LinearStateMap:
    """Compose the linear dynamics round by round into exact coefficient
    vectors for every state at every period."""
    N = sol.n_periods
    m = LinearStateMap(N)
    ev, ea = m.ev(), m.ea()
    for n in range(1, N + 1):
        st = sol.steps[n - 1]
        ew = np.zeros(m.dim)
        ew[1 + n] = 1.0
        d_i = st.beta_i * (ev - m.p[n - 1])
        d_r = st.beta_r * (ea - m.theta_r[n - 1]) + st.alpha_r * m.q[n - 1]
        y = d_i + d_r + ew
        m.dtheta_i[n - 1] = d_i
        m.dtheta_r[n - 1] = d_r
        m.y[n - 1] = y
        m.p[n] = m.p[n - 1] + st.lam * y + st.mu * m.q[n - 1]
        m.q[n] = m.q[n - 1] + st.r * y + st.s * m.q[n - 1]
        m.theta_i[n] = m.theta_i[n - 1] + d_i
        m.theta_r[n] = m.theta_r[n - 1] + d_r
    return m


def _project(C, basis, target):
    """Coefficient vector (over primitives) of the L2 projection of ``target``
    on the span of the rows of ``basis``."""
    G = basis @ C @ basis.T
    try:
        b = np.linalg.solve(G, basis @ C @ target)
    except np.linalg.LinAlgError as e:
        raise SingularCovariance(str(e))
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > 1e13:
        raise SingularCovariance(f"conditioning Gram matrix cond={cond:.2e}")
    return b @ basis


def _l2(C, vec):
    return float(np.sqrt(max(vec @ C @ vec, 0.0)))


def verify_filtering(sol: EquilibriumSolution, m: LinearStateMap = None,
                     threshold=1e-9) -> dict:
    """Check that price and demand estimate are the exact conditional
    expectations given order-flow history, and that the stored moment triples
    are the exact conditional (co)variances.

    Returns a JSON-ready report with per-check max deviations.
    """
    if m is None:
        m = build_state_map(sol)
    C = primitive_covariance(sol)
    ev, ea = m.ev(), m.ea()
    N = m.n_periods
    dev_p = dev_q = dev_mom = 0.0
    gram_resid = 0.0
    for n in range(1, N + 1):
        basis = m.y[:n]
        proj_v = _project(C, basis, ev)
        dev_p = max(dev_p, _l2(C, proj_v - m.p[n]))
        gap = ea - m.theta_r[n]
        proj_gap = _project(C, basis, gap)
        dev_q = max(dev_q, _l2(C, proj_gap - m.q[n]))
        # orthogonality of the projection residual validates the oracle itself
        resid = ev - proj_v
        gram_resid = max(gram_resid, float(np.max(np.abs(basis @ C @ resid))))
        g1 = ea - m.theta_r[n] - m.q[n]
        g2 = ev - m.p[n]
        mom = sol.moments[n]
        dev_mom = max(dev_mom,
                      abs(g1 @ C @ g1 - mom.sigma1),
                      abs(g2 @ C @ g2 - mom.sigma2),
                      abs(g1 @ C @ g2 - mom.sigma3))
    checks = [
        {"name": "price_is_conditional_value", "max_deviation": dev_p},
        {"name": "demand_estimate_is_conditional_gap", "max_deviation": dev_q},
        {"name": "moments_match_exact_conditioning", "max_deviation": dev_mom},
        {"name": "projection_orthogonality", "max_deviation": gram_resid,
         "threshold": 1e-10, "passed": gram_resid < 1e-10},
    ]
    for c in checks:
        c["max_deviation"] = float(c["max_deviation"])
        c.setdefault("threshold", threshold)
        c["passed"] = bool(c.get("passed", c["max_deviation"] < c["threshold"]))
    return {"kind": "filtering_report", "n_periods": N, "checks": checks,
            "passed": all(c["passed"] for c in checks)}


def verify_private_filters(sol: EquilibriumSolution, m: LinearStateMap = None,
                           threshold=1e-9) -> dict:
    """Check the two private-information identities by exact projection.

    Conditioning on the target and past order flow, the expected mispricing
    is proportional to the rebalancer's private gap; conditioning on the value
    and past order flow, the expected gap is proportional to mispricing.  The
    proportionality constants are moment ratios; the report also records which
    ratio timing (pre-trade vs post-trade) actually matches.
    """
    if m is None:
        m = build_state_map(sol)
    C = primitive_covariance(sol)
    ev, ea = m.ev(), m.ea()
    N = m.n_periods
    dev_reb_side = dev_ins_side = 0.0
    dev_reb_side_post = dev_ins_side_post = 0.0
    for n in range(1, N + 1):
        pre = sol.moments[n - 1]
        post = sol.moments[n]
        basis = np.vstack([ea, m.y[:n - 1]]) if n > 1 else ea[None, :]
        target = ev - m.p[n - 1]
        proj = _project(C, basis, target)
        gap = ea - m.theta_r[n - 1] - m.q[n - 1]
        dev_reb_side = max(dev_reb_side,
                           _l2(C, proj - (pre.sigma3 / pre.sigma1) * gap))
        if post.sigma1 > 0:
            dev_reb_side_post = max(dev_reb_side_post,
                                    _l2(C, proj - (post.sigma3 / post.sigma1) * gap))
        basis = np.vstack([ev, m.y[:n - 1]]) if n > 1 else ev[None, :]
        target = ea - m.theta_r[n - 1] - m.q[n - 1]
        proj = _project(C, basis, target)
        mis = ev - m.p[n - 1]
        dev_ins_side = max(dev_ins_side,
                           _l2(C, proj - (pre.sigma3 / pre.sigma2) * mis))
        if post.sigma2 > 0:
            dev_ins_side_post = max(dev_ins_side_post,
                                    _l2(C, proj - (post.sigma3 / post.sigma2) * mis))
    checks = [
        {"name": "rebalancer_private_filter_pre_ratio", "max_deviation": dev_reb_side},
        {"name": "insider_private_filter_pre_ratio", "max_deviation": dev_ins_side},
    ]
    for c in checks:
        c["max_deviation"] = float(c["max_deviation"])
        c["threshold"] = threshold
        c["passed"] = bool(c["max_deviation"] < threshold)
    return {
        "kind": "private_filter_report",
        "n_periods": N,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
        "ratio_convention": {
            "matching": ("pre_trade"
                         if max(dev_reb_side, dev_ins_side)
                         <= max(dev_reb_side_post, dev_ins_side_post)
                         else "post_trade"),
            "pre_trade_deviation": float(max(dev_reb_side, dev_ins_side)),
            "post_trade_deviation": float(max(dev_reb_side_post, dev_ins_side_post)),
        },
    }


def state_covariance(sol: EquilibriumSolution, rows) -> np.ndarray:
    """Exact covariance matrix of any stack of state coefficient rows."""
    C = primitive_covariance(sol)
    rows = np.asarray(rows)
    return rows @ C @ rows.T
