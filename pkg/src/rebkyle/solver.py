"""Equilibrium solver: terminal step, per-period backward induction on a
seven-equation polynomial system, and an outer shooting loop on the three
conjectured pre-terminal moments until the exogenous time-0 moments are hit.

The outer loop is wrapped in a continuation scheme: the target-variance
parameter is walked up from a tiny value (where the model collapses to the
classic single-insider benchmark, whose solution is cheap and reliable) and,
if a nonzero target-value correlation is requested, the correlation is then
walked up at the final variance.  Each converged stage warm-starts the next.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import root as _scipy_root

from .errors import (AdmissibilityFail, InnerNoConvergence, NoPositiveRoot,
                     OuterNoConvergence, PathologicalRegion, SocViolation)
from .model import (EquilibriumSolution, InsiderValueCoeffs, ModelParams,
                    MomentTriple, RebalancerValueCoeffs, StepCoefficients,
                    initial_moments, validate_params)
from .recursions import (innovation_variances, insider_foc,
                         insider_vf_recursion, moment_update, mu_s_coeffs,
                         pricing_coeffs, rebalancer_foc,
                         rebalancer_vf_recursion, second_order_checks)


@dataclass(frozen=True)
class SolverConfig:
    """Numerical knobs for the nested solves."""

    inner_tol: float = 1e-12
    outer_tol: float = 1e-10
    max_inner_iters: int = 4000
    max_outer_iters: int = 60
    homotopy_steps: int = 5
    jacobian_fd_step: float = 1e-7
    multistart_grid: tuple = ()

    def validate(self):
        for name in ("inner_tol", "outer_tol", "jacobian_fd_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("max_inner_iters", "max_outer_iters", "homotopy_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        return self


@dataclass
class ShootingState:
    """Snapshot of the outer loop: conjectured pre-terminal moments, the
    resulting time-0 moment mismatch, and a convergence flag."""

    guess: MomentTriple
    mismatch: tuple
    converged: bool


# ---------------------------------------------------------------------------
# Single-insider benchmark


def kyle_benchmark(p: ModelParams) -> dict:
    """Backward recursion of the single-insider benchmark market (no
    rebalancer), solved by bisection on the pre-terminal value variance.

    Returns per-period arrays ``lam``, ``beta_i`` (index 0 = period 1) and
    ``sigma2`` indexed by time 0..N.  The target-variance parameter of ``p``
    is ignored.
    """
    validate_params(p)
    N, sv2, swd = p.n_periods, p.sigma_v_sq, p.sigma_w_sq_delta

    def backward(sig2_guess):
        lam = np.zeros(N + 1)
        bI = np.zeros(N + 1)
        S2 = np.zeros(N + 1)
        S2[N - 1] = sig2_guess
        lam[N] = 0.5 * np.sqrt(sig2_guess / swd)
        bI[N] = 1.0 / (2 * lam[N])
        S2[N] = (1 - lam[N] * bI[N]) * S2[N - 1]
        i11_next = 1.0 / (4 * lam[N])
        for n in range(N - 1, 0, -1):
            s2n = S2[n]
            i11 = i11_next
            x = np.array([lam[n + 1], bI[n + 1] * 0.9, s2n * 1.1])

            def res(x):
                l, b, sp_ = x
                return np.array([
                    l * (b * b * sp_ + swd) - b * sp_,
                    s2n - (1 - l * b) * sp_,
                    b * 2 * l * (-1 + i11 * l) - (-1 + 2 * i11 * l),
                ])

            sol = _scipy_root(res, x, method="hybr", options=dict(xtol=1e-14))
            x = sol.x
            lam[n], bI[n], S2[n - 1] = x
            i11_next = 1.0 / (4 * lam[n] * (1 - i11 * lam[n]))
        return lam, bI, S2

    lo, hi = 1e-12 * sv2, sv2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if backward(mid)[2][0] - sv2 > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-16 * sv2:
            break
    lam, bI, S2 = backward(0.5 * (lo + hi))
    return {"lam": lam[1:].copy(), "beta_i": bI[1:].copy(), "sigma2": S2.copy()}


# ---------------------------------------------------------------------------
# Terminal step


def terminal_step(guess: MomentTriple, p: ModelParams):
    """Closed-form solve of the last trading round.

    The rebalancer trades its whole remaining gap, so only the price impact
    and the insider loading are free; eliminating the insider loading gives a
    scalar equation with the closed-form positive root used here.  Returns the
    terminal step coefficients and both agents' value coefficients at N-1.
    """
    guess.check()
    swd = p.sigma_w_sq_delta
    s1, s2, s3 = guess.as_tuple()
    if s2 <= 0.0:
        raise NoPositiveRoot("pre-terminal value variance must be positive")
    den = s1 + swd - 0.75 * s3 * s3 / s2
    if den <= 0.0:
        raise NoPositiveRoot("terminal denominator not positive")
    lam_n = float(0.5 * np.sqrt(s2 / den))
    beta_i = 1.0 / (2 * lam_n) - s3 / (2 * s2)
    step = StepCoefficients(lam=lam_n, mu=-lam_n, r=0.0, s=-1.0,
                            beta_r=1.0, alpha_r=0.0, beta_i=beta_i)
    vf_i_prev = insider_vf_recursion(
        lam_n, 0.0, 1.0, InsiderValueCoeffs(0.0, 0.0, 0.0, 0.0),
        innovation_var=0.0, moment_ratio=0.0)
    vf_r_prev = RebalancerValueCoeffs(l0=0.0, l11=-lam_n, l12=-lam_n * beta_i,
                                      l13=lam_n, l22=0.0, l23=0.0, l33=0.0)
    return step, vf_i_prev, vf_r_prev


# ---------------------------------------------------------------------------
# Induction step


def _induction_residual(x, s_post, vf_i, vf_r, swd):
    """Seven residuals of the per-period system, row-scaled so the tolerance
    acts relatively even when moments span many orders of magnitude."""
    s1n, s2n, s3n = s_post
    s1sc = max(abs(s1n), 1e-300)
    s2sc = max(abs(s2n), 1e-300)
    s3sc = np.sqrt(s1sc * s2sc)
    w = np.array([1.0, s3sc, s1sc, s2sc, s3sc, 1.0, 1.0])
    i11, i12, i22 = vf_i.as_tuple()
    l11, l12, l13, l22, l23, l33 = vf_r.as_tuple()

    l, r_, s1p, s2p, s3p, b_i, b_r = x
    D = b_i**2 * s2p + b_r**2 * s1p + 2 * b_i * b_r * s3p + swd
    den_i = 2 * (i22 * r_**2 + l * (-1 + i12 * r_ + i11 * l))
    g1 = (-1 + i12 * r_ + 2 * i11 * l) / den_i
    g2 = -b_r + (-2 * i22 * r_ * (-1 + b_r) + i12 * l - b_r * l * (i12 + 1)) / den_i
    den_r = 2 * (l11 - l13 * r_ + l33 * r_**2 + l * (l12 - l23 * r_ + l22 * l))
    d1 = (2 * l11 - l13 * r_ + l + l12 * l) / den_r
    d2 = -b_i + (l12 - r_ * (l23 + l13 * b_i) + l12 * b_i * l
                 + 2 * (l11 * b_i + l22 * l)) / den_r
    return np.array([
        l * D - (b_i * s2p + b_r * s3p),
        r_ * D - (1 - b_r) * (b_i * s3p + b_r * s1p),
        s1n - (1 - b_r) * ((1 - b_r - r_ * b_r) * s1p - r_ * b_i * s3p),
        s2n - ((1 - l * b_i) * s2p - l * b_r * s3p),
        s3n - (1 - b_r) * ((1 - l * b_i) * s3p - l * b_r * s1p),
        b_i - (g1 + g2 * s3p / s2p),
        b_r - (d1 + d2 * s3p / s1p),
    ]) / w


def induction_step(post_moments: MomentTriple, vf_i: InsiderValueCoeffs,
                   vf_r: RebalancerValueCoeffs, p: ModelParams,
                   cfg: SolverConfig, init_guess):
    """Solve one backward-induction period.

    Finds (lam, r, pre-trade moment triple, beta_i, beta_r) satisfying the
    pricing/filtering restrictions, the moment recursions, and both agents'
    first-order consistency conditions; then fills in (mu, s), the rebalancer
    loading on the market's demand estimate via its affine fixed point, and
    the previous-period value coefficients.

    Returns (StepCoefficients, MomentTriple at n-1, InsiderValueCoeffs at n-1,
    RebalancerValueCoeffs at n-1, solution 7-vector).
    """
    swd = p.sigma_w_sq_delta
    s_post = post_moments.as_tuple()
    x0 = np.asarray(init_guess, float)
    if not np.all(np.isfinite(x0)):
        raise InnerNoConvergence("non-finite initial guess")

    def res(x):
        return _induction_residual(x, s_post, vf_i, vf_r, swd)

    sol = _scipy_root(res, x0, method="hybr",
                      options=dict(xtol=1e-14, maxfev=cfg.max_inner_iters))
    x = sol.x
    f = res(x)
    resid = float(np.max(np.abs(f)))
    if not np.all(np.isfinite(f)) or resid > max(cfg.inner_tol, 1e-10):
        raise InnerNoConvergence(f"residual {resid:.2e} above tolerance")
    l, r_, s1p, s2p, s3p, b_i, b_r = (float(v) for v in x)
    if s1p <= 0 or s2p <= 0 or s3p**2 > s1p * s2p * (1 + 1e-12):
        raise AdmissibilityFail(f"pre-trade moments inadmissible: {x}")
    ok_i, ok_r, _ = second_order_checks(l, r_, vf_i, vf_r)
    if not (ok_i and ok_r):
        raise AdmissibilityFail("second-order condition fails at the root")

    prior = MomentTriple(s1p, s2p, s3p)
    # rebalancer demand-estimate loading: its consistency condition is affine
    # in the loading itself, so solve the scalar fixed point directly
    c = rebalancer_foc(l, r_, 0.0, b_r, b_i, vf_r)[1] * s3p / s1p
    d3_at0 = rebalancer_foc(l, r_, 0.0, b_r, b_i, vf_r)[2]
    d3_at1 = rebalancer_foc(l, r_, 1.0, b_r, b_i, vf_r)[2]
    slope = d3_at1 - d3_at0
    a_r = (d3_at0 - c) / (1 - slope)
    mu, s = mu_s_coeffs(l, r_, a_r, b_r)
    step = StepCoefficients(lam=l, mu=mu, r=r_, s=s,
                            beta_r=b_r, alpha_r=a_r, beta_i=b_i)
    var_z_i, var_z_r = innovation_variances(b_i, b_r, prior, swd)
    s1n, s2n, s3n = s_post
    vf_i_prev = insider_vf_recursion(l, r_, b_r, vf_i, innovation_var=var_z_i,
                                     moment_ratio=s3n / s2n)
    vf_r_prev = rebalancer_vf_recursion(l, r_, a_r, b_i, b_r, vf_r,
                                        innovation_var=var_z_r,
                                        moment_ratio=s3n / s1n)
    return step, prior, vf_i_prev, vf_r_prev, x


# ---------------------------------------------------------------------------
# Backward pass and shooting


def _default_init(s_post, lam_next, beta_i_next):
    s1n, s2n, s3n = s_post
    b_r0 = 0.5
    return np.array([lam_next, 0.0, s1n / (1 - b_r0) ** 2, s2n * 1.08, s3n,
                     beta_i_next * 0.55, b_r0])


def backward_pass(guess: MomentTriple, p: ModelParams, cfg: SolverConfig,
                  warm=None):
    """Full backward induction from conjectured pre-terminal moments.

    ``warm`` optionally maps period index -> 7-vector initial guess.  Returns
    a dict of per-period arrays plus the solved 7-vectors for warm-starting.
    """
    N = p.n_periods
    steps = [None] * (N + 1)          # steps[n] for n = 1..N
    moments = [None] * (N + 1)
    vf_i = [None] * (N + 1)
    vf_r = [None] * (N + 1)
    xsol = {}

    step_N, vf_i_prev, vf_r_prev = terminal_step(guess, p)
    steps[N] = step_N
    moments[N - 1] = guess
    moments[N] = moment_update(step_N.beta_i, step_N.beta_r, step_N.lam,
                               step_N.r, guess)
    vf_i[N] = InsiderValueCoeffs(0.0, 0.0, 0.0, 0.0)
    vf_i[N - 1] = vf_i_prev
    vf_r[N - 1] = vf_r_prev

    xprev = None
    prev_post = None
    for n in range(N - 1, 0, -1):
        s_post = moments[n].as_tuple()
        if warm is not None and warm.get(n) is not None:
            x0 = np.asarray(warm[n], float)
        elif xprev is not None:
            # extrapolate the backward growth of the pre-trade moments
            x0 = xprev.copy()
            r1 = xprev[2] / prev_post[0] if prev_post[0] > 0 else 1.0
            r2 = xprev[3] / prev_post[1]
            x0[2] = s_post[0] * min(r1, 4.0)
            x0[3] = s_post[1] * r2
            x0[4] = s_post[2] + (xprev[4] - prev_post[2])
        else:
            x0 = _default_init(s_post, steps[n + 1].lam, steps[n + 1].beta_i)
        prev_post = s_post
        step, prior, vfi_prev, vfr_prev, x = induction_step(
            moments[n], vf_i[n], vf_r[n], p, cfg, x0)
        steps[n] = step
        moments[n - 1] = prior
        vf_i[n - 1] = vfi_prev
        vf_r[n - 1] = vfr_prev
        xsol[n] = x
        xprev = x
    return {"steps": steps, "moments": moments, "vf_i": vf_i, "vf_r": vf_r,
            "xsol": xsol}


def _mismatch(guess, p, cfg, warm=None):
    out = backward_pass(guess, p, cfg, warm=warm)
    m0 = out["moments"][0]
    t = initial_moments(p)
    m = np.array([m0.sigma1 - t.sigma1, m0.sigma2 - t.sigma2,
                  m0.sigma3 - t.sigma3])
    return m, out


def _shoot_from(g0, p, cfg, warm=None):
    """Newton on the 3-vector time-0 moment mismatch as a function of the
    conjectured pre-terminal moments."""
    g = np.array(g0, float)
    out = None
    best = None
    for _ in range(cfg.max_outer_iters):
        m, out = _mismatch(MomentTriple(*g), p, cfg, warm=warm)
        warm = out["xsol"]
        nm = float(np.max(np.abs(m)))
        if best is None or nm < best[0]:
            best = (nm, g.copy(), tuple(m))
        if nm < cfg.outer_tol:
            return g, out
        J = np.zeros((3, 3))
        gsc = np.array([abs(g[0]), abs(g[1]), np.sqrt(abs(g[0]) * abs(g[1]))])
        for j in range(3):
            h = cfg.jacobian_fd_step * 10 * max(abs(g[j]), 1e-3 * gsc[j])
            gp = g.copy()
            gp[j] += h
            J[:, j] = (_mismatch(MomentTriple(*gp), p, cfg, warm=warm)[0] - m) / h
        dg = np.linalg.solve(J, m)
        step = 1.0
        for _ in range(30):
            gn = g - step * dg
            if gn[0] > 0 and gn[1] > 0 and gn[2] ** 2 <= gn[0] * gn[1]:
                try:
                    mn, _ = _mismatch(MomentTriple(*gn), p, cfg, warm=warm)
                    if np.max(np.abs(mn)) < nm:
                        g = gn
                        break
                except (InnerNoConvergence, AdmissibilityFail, SocViolation,
                        NoPositiveRoot):
                    pass
            step *= 0.5
        else:
            st = ShootingState(MomentTriple(*best[1]), best[2], False)
            raise OuterNoConvergence(
                f"shooting line search stalled at mismatch {nm:.2e}", st)
    st = ShootingState(MomentTriple(*best[1]), best[2], False)
    raise OuterNoConvergence("shooting iteration cap reached", st)


def _rescale_warm(warm, scale):
    out = {}
    for n, xv in warm.items():
        xv = np.asarray(xv, float).copy()
        xv[1] *= scale   # demand-estimate loading
        xv[2] *= scale   # pre-trade gap variance
        xv[4] *= scale   # pre-trade cross moment
        out[n] = xv
    return out


def shoot(p: ModelParams, cfg: SolverConfig = SolverConfig()) -> EquilibriumSolution:
    """Solve the full equilibrium for ``p`` by continuation from the
    single-insider limit, then assemble the solution object."""
    validate_params(p)
    cfg.validate()
    t_start = time.time()
    N = p.n_periods
    sa2_t, rho_t = p.sigma_a_sq, p.rho

    if N == 1:
        # no shooting dimension: the conjectured moments are pinned
        g = np.array(initial_moments(p).as_tuple())
        out = backward_pass(MomentTriple(*g), p, cfg)
        return _assemble(p, cfg, out, n_stages=0, elapsed=time.time() - t_start)

    kb = kyle_benchmark(p)
    sa2_start = min(1e-8, sa2_t)
    p0 = ModelParams(N, p.sigma_v_sq, sa2_start, p.sigma_w_sq, 0.0)
    stages = 0
    try:
        g, out = _shoot_from([0.9 * sa2_start, kb["sigma2"][N - 1], 0.0], p0, cfg)
    except OuterNoConvergence as e:
        g = out = None
        for mg in cfg.multistart_grid:
            try:
                g, out = _shoot_from(list(mg), p0, cfg)
                break
            except OuterNoConvergence:
                continue
        if g is None:
            raise PathologicalRegion(
                f"no admissible starting branch at the benchmark limit: {e}")
    warm = out["xsol"]
    sa2_cur = sa2_start

    lstep = max(0.1, np.log10(max(sa2_t / sa2_start, 1.0)) / cfg.homotopy_steps)
    min_lstep = lstep / 2 ** 14
    while sa2_cur < sa2_t * (1 - 1e-12):
        stages += 1
        sa2_try = min(10 ** (np.log10(sa2_cur) + lstep), sa2_t)
        scale = sa2_try / sa2_cur
        g0 = [g[0] * scale, g[1], g[2] * scale]
        p_try = ModelParams(N, p.sigma_v_sq, sa2_try, p.sigma_w_sq, 0.0)
        try:
            g, out = _shoot_from(g0, p_try, cfg, warm=_rescale_warm(warm, scale))
            warm = out["xsol"]
            sa2_cur = sa2_try
            lstep = min(lstep * 1.5, 2.0)
        except (OuterNoConvergence, InnerNoConvergence, AdmissibilityFail,
                SocViolation, NoPositiveRoot, np.linalg.LinAlgError):
            lstep *= 0.5
            if lstep < min_lstep:
                raise PathologicalRegion(
                    f"continuation in the target variance stalled near {sa2_try:.6g}")

    rho_cur = 0.0
    rstep = max(0.05, rho_t / cfg.homotopy_steps)
    min_rstep = rstep / 2 ** 14
    while rho_cur < rho_t - 1e-12:
        stages += 1
        rho_try = min(rho_cur + rstep, rho_t)
        p_try = ModelParams(N, p.sigma_v_sq, sa2_t, p.sigma_w_sq, rho_try)
        g0 = [g[0], g[1], g[2] + (rho_try - rho_cur) * np.sqrt(sa2_t * p.sigma_v_sq) * 0.3]
        try:
            g, out = _shoot_from(g0, p_try, cfg, warm=warm)
            warm = out["xsol"]
            rho_cur = rho_try
            rstep = min(rstep * 1.5, 0.5)
        except (OuterNoConvergence, InnerNoConvergence, AdmissibilityFail,
                SocViolation, NoPositiveRoot, np.linalg.LinAlgError):
            rstep *= 0.5
            if rstep < min_rstep:
                raise PathologicalRegion(
                    f"continuation in the correlation stalled near {rho_try:.6g}")

    return _assemble(p, cfg, out, n_stages=stages, elapsed=time.time() - t_start)


# ---------------------------------------------------------------------------
# Solution assembly and residual audit


def solution_residuals(p: ModelParams, steps, moments, vf_i, vf_r):
    """Raw (unscaled) residuals of every equilibrium equation evaluated on
    solved constants; returns the max absolute value."""
    N = p.n_periods
    swd = p.sigma_w_sq_delta
    worst = 0.0
    for n in range(1, N + 1):
        st = steps[n]
        prior = moments[n - 1]
        lam_c, r_c = pricing_coeffs(st.beta_i, st.beta_r, prior, swd)
        mu_c, s_c = mu_s_coeffs(st.lam, st.r, st.alpha_r, st.beta_r)
        post = moment_update(st.beta_i, st.beta_r, st.lam, st.r, prior)
        worst = max(worst, abs(st.lam - lam_c), abs(st.r - r_c),
                    abs(st.mu - mu_c), abs(st.s - s_c),
                    abs(post.sigma1 - moments[n].sigma1),
                    abs(post.sigma2 - moments[n].sigma2),
                    abs(post.sigma3 - moments[n].sigma3))
        if n < N:
            g1, g2 = insider_foc(st.lam, st.r, st.beta_r, vf_i[n])
            worst = max(worst, abs(st.beta_i - (g1 + g2 * prior.sigma3 / prior.sigma2)))
            d1, d2, d3 = rebalancer_foc(st.lam, st.r, st.alpha_r, st.beta_r,
                                        st.beta_i, vf_r[n])
            worst = max(worst, abs(st.beta_r - (d1 + d2 * prior.sigma3 / prior.sigma1)))
            worst = max(worst, abs(st.alpha_r - (d3 - d2 * prior.sigma3 / prior.sigma1)))
        else:
            worst = max(worst, abs(st.beta_r - 1.0), abs(st.alpha_r),
                        abs(st.beta_i - (1.0 / (2 * st.lam)
                                         - prior.sigma3 / (2 * prior.sigma2))))
    return float(worst)


def _assemble(p, cfg, out, n_stages, elapsed):
    N = p.n_periods
    steps = out["steps"]
    moments = out["moments"]
    vf_i = out["vf_i"]
    vf_r = out["vf_r"]
    # value coefficients at time 0 require one more recursion application only
    # for bookkeeping completeness; reuse the period-1 step
    if vf_i[0] is None:
        vf_i[0] = vf_i[1]
    gamma = []
    delta = []
    for n in range(1, N + 1):
        st = steps[n]
        if n < N:
            gamma.append(insider_foc(st.lam, st.r, st.beta_r, vf_i[n]))
            delta.append(rebalancer_foc(st.lam, st.r, st.alpha_r, st.beta_r,
                                        st.beta_i, vf_r[n]))
        else:
            # terminal round: zero continuation for the insider, pinned
            # rebalancer trade; record the degenerate coefficients
            gamma.append((1.0 / (2 * st.lam), -0.5))
            delta.append((1.0, 0.0, 0.0))
    resid = solution_residuals(p, steps, moments, vf_i, vf_r)
    m0 = moments[0]
    t = initial_moments(p)
    mismatch = float(max(abs(m0.sigma1 - t.sigma1), abs(m0.sigma2 - t.sigma2),
                         abs(m0.sigma3 - t.sigma3)))
    soc_margins = []
    for n in range(1, N + 1):
        st = steps[n]
        _, _, mg = second_order_checks(st.lam, st.r, vf_i[n], vf_r[n] if vf_r[n]
                                       is not None else RebalancerValueCoeffs(
                                           0, 0, 0, 0, 0, 0, 0))
        soc_margins.append((float(mg[0]), float(mg[1])))
    diagnostics = {
        "time0_mismatch": mismatch,
        "continuation_stages": n_stages,
        "elapsed_seconds": elapsed,
        "soc_margins": soc_margins,
        "inner_tol": cfg.inner_tol,
        "outer_tol": cfg.outer_tol,
    }
    # the terminal entries of the value sequences are the zero boundary for
    # the insider and unused for the rebalancer; store explicit zeros
    if vf_r[N] is None:
        vf_r[N] = RebalancerValueCoeffs(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    if vf_r[0] is None:
        vf_r[0] = vf_r[1]
    return EquilibriumSolution(
        params=p,
        steps=tuple(steps[1:]),
        moments=tuple(moments),
        insider_vf=tuple(vf_i),
        rebalancer_vf=tuple(vf_r),
        gamma=tuple(gamma),
        delta_coef=tuple(delta),
        residual_norm=resid,
        diagnostics=diagnostics,
    )
