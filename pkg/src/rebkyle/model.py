"""Domain types, parameter validation, and JSON serialization.

Conventions
-----------
Periods are numbered n = 1..N as in the model description; Python lists are
0-based, so ``steps[k]`` holds the coefficients of period ``k + 1``.  Moment
and value-function sequences have an extra time-0 entry: ``moments[k]`` is the
post-trade moment triple after round ``k`` (``moments[0]`` is the prior).

The time-0 cross moment is stored as the covariance ``rho * sigma_a * sigma_v``
so that the Cauchy-Schwarz invariant holds for every parameter choice, not
only at unit variances.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .errors import InvalidParam

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelParams:
    """Exogenous primitives of the market.

    Attributes
    ----------
    n_periods : int
        Number of trading rounds N in the day.
    sigma_v_sq : float
        Variance of the terminal asset value (price^2 units).
    sigma_a_sq : float
        Variance of the rebalancer's terminal holding target (shares^2).
    sigma_w_sq : float
        Total daily noise-trade variance (shares^2); each round contributes
        ``sigma_w_sq * delta``.
    rho : float
        Correlation between the target and the terminal value, in [0, 1].
    """

    n_periods: int
    sigma_v_sq: float
    sigma_a_sq: float
    sigma_w_sq: float
    rho: float = 0.0

    @property
    def delta(self) -> float:
        """Time step: the day is normalized to [0, 1]."""
        return 1.0 / self.n_periods

    @property
    def sigma_w_sq_delta(self) -> float:
        """Per-round noise-trade variance."""
        return self.sigma_w_sq * self.delta


def validate_params(p: ModelParams) -> ModelParams:
    """Return ``p`` unchanged if all invariants hold, else raise InvalidParam."""
    if not isinstance(p.n_periods, int) or p.n_periods < 1:
        raise InvalidParam("n_periods", f"must be an integer >= 1, got {p.n_periods!r}")
    for name in ("sigma_v_sq", "sigma_a_sq", "sigma_w_sq"):
        v = getattr(p, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise InvalidParam(name, f"must be a finite positive number, got {v!r}")
    if not (isinstance(p.rho, (int, float)) and 0.0 <= p.rho <= 1.0):
        raise InvalidParam("rho", f"must lie in [0, 1], got {p.rho!r}")
    return p


def initial_moments(p: ModelParams) -> "MomentTriple":
    """Prior moment triple at time 0: variances of target gap and mispricing
    plus their covariance."""
    validate_params(p)
    return MomentTriple(
        sigma1=p.sigma_a_sq,
        sigma2=p.sigma_v_sq,
        sigma3=p.rho * math.sqrt(p.sigma_a_sq * p.sigma_v_sq),
    )


@dataclass(frozen=True)
class MomentTriple:
    """Post-trade conditional moments.

    sigma1: variance of the rebalancer's private gap (target minus holdings
    minus the market's estimate of the remaining demand), shares^2.
    sigma2: variance of mispricing (value minus price), price^2.
    sigma3: their covariance, share * price.
    """

    sigma1: float
    sigma2: float
    sigma3: float

    def check(self, tol: float = 1e-12) -> None:
        if self.sigma1 < -tol or self.sigma2 < -tol:
            raise InvalidParam("sigma", f"negative variance in {self}")
        bound = self.sigma1 * self.sigma2
        if self.sigma3 ** 2 > bound + tol * max(1.0, bound):
            raise InvalidParam("sigma3", f"Cauchy-Schwarz violated in {self}")

    def as_tuple(self):
        return (self.sigma1, self.sigma2, self.sigma3)


@dataclass(frozen=True)
class StepCoefficients:
    """Per-period equilibrium constants.

    lam: price impact of the order-flow innovation (price/share).
    mu: price drift loading on the market's demand estimate (price/share).
    r, s: update loadings of the market's demand estimate (dimensionless).
    beta_r, alpha_r: rebalancer loadings on its private gap and on the
    market's demand estimate.
    beta_i: insider loading on mispricing (share/price).
    """

    lam: float
    mu: float
    r: float
    s: float
    beta_r: float
    alpha_r: float
    beta_i: float


@dataclass(frozen=True)
class InsiderValueCoeffs:
    """Quadratic value-function coefficients of the insider on its two-state
    vector: constant, squared first state, cross term, squared second state."""

    i0: float
    i11: float
    i12: float
    i22: float

    def as_tuple(self):
        return (self.i11, self.i12, self.i22)


@dataclass(frozen=True)
class RebalancerValueCoeffs:
    """Quadratic value-function coefficients of the rebalancer on its
    three-state vector (constant plus the six upper-triangle products)."""

    l0: float
    l11: float
    l12: float
    l13: float
    l22: float
    l23: float
    l33: float

    def as_tuple(self):
        return (self.l11, self.l12, self.l13, self.l22, self.l23, self.l33)


@dataclass(frozen=True)
class EquilibriumSolution:
    """Full output of the equilibrium solver.

    steps[k] holds period k+1; moments/insider_vf/rebalancer_vf have N+1
    entries indexed by time 0..N.  gamma[k] and delta_coef[k] are the
    first-order-condition coefficient tuples of period k+1.  residual_norm is
    the max absolute residual of all equilibrium equations evaluated on the
    stored constants.
    """

    params: ModelParams
    steps: tuple
    moments: tuple
    insider_vf: tuple
    rebalancer_vf: tuple
    gamma: tuple
    delta_coef: tuple
    residual_norm: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_periods(self) -> int:
        return self.params.n_periods

    def coefficient_arrays(self):
        """Return the per-period coefficient vectors as plain lists keyed by
        name, each of length N (index 0 is period 1)."""
        out = {}
        for name in ("lam", "mu", "r", "s", "beta_r", "alpha_r", "beta_i"):
            out[name] = [getattr(st, name) for st in self.steps]
        return out


# ---------------------------------------------------------------------------
# JSON serialization


def _params_to_dict(p: ModelParams) -> dict:
    return dataclasses.asdict(p)


def solution_to_dict(sol: EquilibriumSolution) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "equilibrium_solution",
        "params": _params_to_dict(sol.params),
        "steps": [dataclasses.asdict(s) for s in sol.steps],
        "moments": [dataclasses.asdict(m) for m in sol.moments],
        "insider_vf": [dataclasses.asdict(v) for v in sol.insider_vf],
        "rebalancer_vf": [dataclasses.asdict(v) for v in sol.rebalancer_vf],
        "gamma": [list(g) for g in sol.gamma],
        "delta_coef": [list(d) for d in sol.delta_coef],
        "residual_norm": sol.residual_norm,
        "diagnostics": sol.diagnostics,
    }


def solution_from_dict(d: dict) -> EquilibriumSolution:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise InvalidParam("schema_version", f"unsupported: {d.get('schema_version')!r}")
    return EquilibriumSolution(
        params=ModelParams(**d["params"]),
        steps=tuple(StepCoefficients(**s) for s in d["steps"]),
        moments=tuple(MomentTriple(**m) for m in d["moments"]),
        insider_vf=tuple(InsiderValueCoeffs(**v) for v in d["insider_vf"]),
        rebalancer_vf=tuple(RebalancerValueCoeffs(**v) for v in d["rebalancer_vf"]),
        gamma=tuple(tuple(g) for g in d["gamma"]),
        delta_coef=tuple(tuple(x) for x in d["delta_coef"]),
        residual_norm=d["residual_norm"],
        diagnostics=d.get("diagnostics", {}),
    )


def save_solution(sol: EquilibriumSolution, path) -> None:
    with open(path, "w") as fh:
        # default=float handles numpy scalars; float64 -> float is lossless
        json.dump(solution_to_dict(sol), fh, indent=1, default=float)
        fh.write("\n")


def load_solution(path) -> EquilibriumSolution:
    with open(path) as fh:
        return solution_from_dict(json.load(fh))
