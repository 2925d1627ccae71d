"""Closed-form per-period formulas: pricing/filtering coefficients, moment
updates, first-order-condition strategy coefficients, second-order checks, and
the quadratic value-function recursions for both strategic agents.

Everything here is a pure function of scalars; no state, no arrays.  The
cross-term closed form of the insider value recursion
(``insider_vf_recursion``) was derived symbolically and is validated against
an exact one-step quadratic Bellman composition by the test suite's oracle
helpers.

Ratio conventions: wherever a moment ratio multiplies a formula below, the
caller passes it explicitly.  First-order coefficients and innovation
variances take the pre-trade (period n-1) ratio; the noise loading inside the
state dynamics, which feeds the constant-term accumulation, takes the
post-trade (period n) ratio.  Both choices were pinned by exact Gaussian
projection on arbitrary (non-equilibrium) coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import DegenerateDenominator, SocViolation
from .model import InsiderValueCoeffs, MomentTriple, RebalancerValueCoeffs


@dataclass(frozen=True)
class StrategyFocCoeffs:
    """First-order-condition coefficients: the insider's pair (gamma1, gamma2)
    and the rebalancer's triple (delta1, delta2, delta3)."""

    gamma1: float
    gamma2: float
    delta1: float
    delta2: float
    delta3: float


def pricing_coeffs(beta_i, beta_r, prior: MomentTriple, sigma_w_sq_delta):
    """Price-impact and demand-estimate loadings (lam, r) implied by the
    market makers' linear projection on the order-flow innovation.

    ``prior`` is the pre-trade moment triple of the period.
    """
    s1, s2, s3 = prior.as_tuple()
    den = beta_i**2 * s2 + beta_r**2 * s1 + 2 * beta_i * beta_r * s3 + sigma_w_sq_delta
    if den == 0.0:
        raise DegenerateDenominator("projection denominator is zero")
    lam = (beta_i * s2 + beta_r * s3) / den
    r = (1 - beta_r) * (beta_i * s3 + beta_r * s1) / den
    return lam, r


def mu_s_coeffs(lam, r, alpha_r, beta_r):
    """Drift loadings keeping price and demand estimate unbiased given the
    predictable part of the rebalancer's order."""
    mu = -lam * (alpha_r + beta_r)
    s = -(1 + r) * (alpha_r + beta_r)
    return mu, s


def moment_update(beta_i, beta_r, lam, r, prior: MomentTriple) -> MomentTriple:
    """One filtering step: post-trade moment triple from the pre-trade one."""
    s1, s2, s3 = prior.as_tuple()
    n1 = (1 - beta_r) * ((1 - beta_r - r * beta_r) * s1 - r * beta_i * s3)
    n2 = (1 - lam * beta_i) * s2 - lam * beta_r * s3
    n3 = (1 - beta_r) * ((1 - lam * beta_i) * s3 - lam * beta_r * s1)
    return MomentTriple(sigma1=n1, sigma2=n2, sigma3=n3)


# ---------------------------------------------------------------------------
# Second-order conditions


def second_order_checks(lam, r, vf_i: InsiderValueCoeffs, vf_r: RebalancerValueCoeffs):
    """Strict-concavity margins of both agents' one-period problems.

    Returns (insider_ok, rebalancer_ok, (insider_margin, rebalancer_margin));
    a margin is the positive slack of the inequality, and ``ok`` requires the
    margin to be strictly positive.
    """
    i11, i12, i22 = vf_i.as_tuple()
    m_i = lam - (i22 * r**2 + i12 * r * lam + i11 * lam**2)
    l11, l12, l13, l22, l23, l33 = vf_r.as_tuple()
    m_r = (l13 * r + l23 * r * lam) - (l11 + l33 * r**2 + l12 * lam + l22 * lam**2)
    return m_i > 0.0, m_r > 0.0, (m_i, m_r)


def _insider_den(lam, r, i11, i12, i22):
    # 2a where a < 0 is the quadratic coefficient of the insider's objective
    return 2 * (i22 * r**2 + lam * (-1 + i12 * r + i11 * lam))


def _rebalancer_den(lam, r, l11, l12, l13, l22, l23, l33):
    return 2 * (l11 - l13 * r + l33 * r**2 + lam * (l12 - l23 * r + l22 * lam))


# ---------------------------------------------------------------------------
# First-order conditions


def insider_foc(lam, r, beta_r, vf: InsiderValueCoeffs):
    """Insider candidate-optimizer coefficients (gamma1, gamma2) given the
    next-period value coefficients."""
    i11, i12, i22 = vf.as_tuple()
    if not (i22 * r**2 + i12 * r * lam + i11 * lam**2 < lam):
        raise SocViolation("insider second-order condition fails")
    den = _insider_den(lam, r, i11, i12, i22)
    g1 = (-1 + i12 * r + 2 * i11 * lam) / den
    g2 = -beta_r + (
        -2 * i22 * r * (-1 + beta_r) + i12 * lam - beta_r * lam * (i12 + 1)
    ) / den
    return g1, g2


def rebalancer_foc(lam, r, alpha_r, beta_r, beta_i, vf: RebalancerValueCoeffs):
    """Rebalancer candidate-optimizer coefficients (delta1, delta2, delta3)."""
    l11, l12, l13, l22, l23, l33 = vf.as_tuple()
    if not (l11 + l33 * r**2 + l12 * lam + l22 * lam**2 < l13 * r + l23 * r * lam):
        raise SocViolation("rebalancer second-order condition fails")
    den = _rebalancer_den(lam, r, l11, l12, l13, l22, l23, l33)
    ab = alpha_r + beta_r
    d1 = (2 * l11 - l13 * r + lam + l12 * lam) / den
    d2 = -beta_i + (
        l12 - r * (l23 + l13 * beta_i) + l12 * beta_i * lam + 2 * (l11 * beta_i + l22 * lam)
    ) / den
    d3 = (
        -2 * l33 * r
        - l13 * (-1 + ab + r * ab)
        + l23 * lam
        + ab * (2 * l33 * r * (1 + r) + lam * (l12 - l23 - 2 * l23 * r + 2 * l22 * lam))
    ) / den
    return d1, d2, d3


# ---------------------------------------------------------------------------
# Innovation variances


def innovation_variances(beta_i, beta_r, prior: MomentTriple, sigma_w_sq_delta):
    """Variances of the surprise components each agent cannot predict in the
    period's order flow, using the pre-trade moment triple."""
    s1, s2, s3 = prior.as_tuple()
    if s2 <= 0.0:
        raise DegenerateDenominator("insider innovation variance needs sigma2 > 0")
    if s1 <= 0.0:
        raise DegenerateDenominator("rebalancer innovation variance needs sigma1 > 0")
    var_z_i = beta_r**2 * (s1 - s3**2 / s2) + sigma_w_sq_delta
    var_z_r = beta_i**2 * (s2 - s3**2 / s1) + sigma_w_sq_delta
    return var_z_i, var_z_r


# ---------------------------------------------------------------------------
# Value-function recursions


def insider_vf_recursion(lam, r, beta_r, vf_next: InsiderValueCoeffs,
                         innovation_var, moment_ratio) -> InsiderValueCoeffs:
    """Insider value coefficients one period earlier.

    ``moment_ratio`` is the post-trade cross-to-mispricing moment ratio of the
    current period; together with ``innovation_var`` it feeds the constant
    term only (the surprise enters both insider states with loadings
    proportional to lam and lam * moment_ratio).
    """
    i11n, i12n, i22n = vf_next.as_tuple()
    if not (i22n * r**2 + i12n * r * lam + i11n * lam**2 < lam):
        raise SocViolation("insider second-order condition fails")
    den4 = 4 * (i11n * lam**2 + i12n * lam * r + i22n * r**2 - lam)
    i11 = (4 * i11n * i22n * r**2 - i12n**2 * r**2 + 2 * i12n * r - 1) / den4
    i12 = -(
        (4 * i11n * i22n - i12n**2) * lam * r * (1 - beta_r)
        + i12n * lam * (1 - beta_r + beta_r * r)
        + 2 * i22n * r * ((1 + r) * beta_r - 1)
        - beta_r * lam
    ) / (den4 / 2)
    i22 = lam * (
        -((i12n * (-1 + beta_r) + beta_r) ** 2) * lam
        - 4 * i22n * (-1 + beta_r) * (-1 + i11n * lam + beta_r * (1 + r - i11n * lam))
    ) / den4
    rz = moment_ratio
    i0 = vf_next.i0 + lam**2 * innovation_var * (i11n + i12n * rz + i22n * rz**2)
    return InsiderValueCoeffs(i0=i0, i11=i11, i12=i12, i22=i22)


def rebalancer_vf_recursion(lam, r, alpha_r, beta_i, beta_r,
                            vf_next: RebalancerValueCoeffs,
                            innovation_var, moment_ratio) -> RebalancerValueCoeffs:
    """Rebalancer value coefficients one period earlier.

    ``moment_ratio`` is the post-trade cross-to-gap moment ratio of the
    current period; the surprise loads the second and third rebalancer states
    with coefficients -r * moment_ratio and r, which yields the constant-term
    increment below.
    """
    l11n, l12n, l13n, l22n, l23n, l33n = vf_next.as_tuple()
    if not (l11n + l33n * r**2 + l12n * lam + l22n * lam**2 < l13n * r + l23n * r * lam):
        raise SocViolation("rebalancer second-order condition fails")
    L11, L12, L13, L22, L23, L33 = l11n, l12n, l13n, l22n, l23n, l33n
    aR, bR, bI = alpha_r, beta_r, beta_i
    den4 = _rebalancer_den(lam, r, L11, L12, L13, L22, L23, L33) * 2
    den2 = den4 / 2
    l11 = -(
        L13**2 * r**2 - 2 * (1 + L12) * L13 * r * lam + (1 + L12) ** 2 * lam**2
        + 4 * L11 * (-L33 * r**2 + lam + L23 * r * lam - L22 * lam**2)
    ) / den4
    l12 = -(
        (L13 * r - lam) * (L23 * r + L13 * r * bI - 2 * L22 * lam)
        + L12**2 * lam * (-1 + bI * lam)
        + L12 * (r * (L13 - 2 * L33 * r) + lam + r * (L23 - 2 * L13 * bI) * lam + bI * lam**2)
        + 2 * L11 * (
            -r * (L23 + 2 * L33 * r * bI)
            + (2 * L22 + bI + 2 * L23 * r * bI) * lam
            - 2 * L22 * bI * lam**2
        )
    ) / den2
    l13 = (
        L13**2 * r * (-1 + aR + r * aR + bR + r * bR)
        + (1 + L12) * lam * (
            -2 * L33 * r * (-1 + aR + bR) - L23 * lam + (L12 + L23) * (aR + bR) * lam
        )
        + 2 * L11 * (
            -2 * L33 * r * (-1 + aR + r * aR + bR + r * bR)
            - L23 * lam
            + (aR + bR) * lam * (1 + L23 + 2 * L23 * r - 2 * L22 * lam)
        )
        + L13 * lam * (
            -1 + aR + bR + L23 * r * (-1 + aR + bR)
            - L12 * (-1 + aR + 2 * r * aR + bR + 2 * r * bR)
            + 2 * L22 * lam - (aR + bR) * (r + 2 * L22 * lam)
        )
    ) / den2
    l22 = -(
        L12**2 * (-1 + bI * lam) ** 2
        - 2 * L12 * r * (L23 - L23 * bI * lam + bI * (-L13 + 2 * L33 * r + L13 * bI * lam))
        + r * (
            (L23**2 - 4 * L22 * L33) * r + L13**2 * r * bI**2
            + L13 * (4 * L22 + 2 * L23 * r * bI - 4 * L22 * bI * lam)
        )
        - 4 * L11 * (
            L22 * (-1 + bI * lam) ** 2 + r * bI * (L23 + L33 * r * bI - L23 * bI * lam)
        )
    ) / den4
    l23 = (
        (L13 * r * (L23 + L13 * bI) - 2 * L11 * (L23 + 2 * L33 * r * bI))
        * (-1 + aR + r * aR + bR + r * bR)
        + (
            L23**2 * r * (-1 + aR + bR)
            + 2 * L11 * L23 * bI * (-1 + aR + 2 * r * aR + bR + 2 * r * bR)
            + 4 * L22 * (-L33 * r * (-1 + aR + bR) + L11 * (aR + bR))
            + L13 * (
                L23 * r * bI * (-1 + aR + bR)
                - 2 * L22 * (1 + (-1 + r) * aR + (-1 + r) * bR)
            )
        ) * lam
        - 2 * L22 * bI * (L13 * (-1 + aR + bR) + 2 * L11 * (aR + bR)) * lam**2
        + L12**2 * (aR + bR) * lam * (-1 + bI * lam)
        + L12 * (
            L23 * lam
            - 2 * L33 * r * (-1 + aR + r * aR + bR + r * bR + bI * (-1 + aR + bR) * lam)
            + L23 * lam * ((-1 + r) * (aR + bR) + bI * (-1 + aR + bR) * lam)
            + L13 * (
                -1 + aR + r * aR + bR + r * bR + bI * lam
                - (1 + 2 * r) * bI * (aR + bR) * lam
            )
        )
    ) / den2
    l33 = -(
        L13**2 * (-1 + aR + r * aR + bR + r * bR) ** 2
        + 2 * L13 * lam * (
            (-1 + aR + r * aR + bR + r * bR) * (L23 * (-1 + aR + bR) - L12 * (aR + bR))
            - 2 * L22 * (-1 + aR + bR) * (aR + bR) * lam
        )
        - 4 * L11 * (
            L33 * (-1 + aR + r * aR + bR + r * bR) ** 2
            + (aR + bR) * lam * (-L23 * (-1 + aR + r * aR + bR + r * bR) + L22 * (aR + bR) * lam)
        )
        + lam * (
            (L23**2 - 4 * L22 * L33) * (-1 + aR + bR) ** 2 * lam
            + L12**2 * (aR + bR) ** 2 * lam
            - 2 * L12 * (-1 + aR + bR) * (
                2 * L33 * (-1 + aR + r * aR + bR + r * bR) - L23 * (aR + bR) * lam
            )
        )
    ) / den4
    rz = moment_ratio
    l0 = vf_next.l0 + innovation_var * r**2 * (L22 * rz**2 - L23 * rz + L33)
    return RebalancerValueCoeffs(l0=l0, l11=l11, l12=l12, l13=l13,
                                 l22=l22, l23=l23, l33=l33)
