"""Explicit constants of the Ricci-curvature uncertainty principle.

The chain runs step by step: shrink rho to
``rho_tilde = min(rho, 3R/16)``, bound the Dirichlet bottom of the skeleton
complement from below (``Lambda``) and above (``lambda_upper``), pick the time
scale ``alpha_star`` from three minimands, and read off ``beta``, ``E0`` and
``kappa``.

``C0`` is of order ``exp(2256 (ln D)^2)`` and overflows a double for every
admissible ``D``, so it is carried as ``log_C0``. ``K`` in :class:`ProblemParams`
is the signed bound ``Ric >= K``; the exit-time and doubling estimates use the
defect ``k = max(-K, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

from .errors import DomainError, PreconditionError
from .model_geometry import (
    ComparisonConstants,
    CurvatureParams,
    comparison_constants,
    lambda_lower_bound,
    ricci_defect,
    sn_k,
    vol_k,
)

EXIT_C1 = 2257.0
EXIT_GAUSS = 2256.0
# relative slack when testing alpha against its precondition maximum
ALPHA_RTOL = 1e-12


class ExitTimePreconditionError(PreconditionError):
    """alpha violates the hypotheses of the exit-time estimate."""


@dataclass(frozen=True)
class ProblemParams:
    """Geometry and potential data (K, n, R, rho, a, b, epsilon) plus optional constant overrides."""

    K: float
    n: int
    R: float
    rho: float
    a: float = 0.0
    b: float = 0.0
    epsilon: float = 0.25
    diameter: float = math.inf
    D: Optional[float] = None
    sturm_C: Optional[float] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise DomainError(f"n must be an integer >= 3, got {self.n}")
        if not 0 < self.rho < self.R:
            raise PreconditionError(f"need 0 < rho < R, got rho={self.rho}, R={self.R}")
        if not 0 <= self.a < 1:
            raise PreconditionError(f"need a in [0, 1), got {self.a}")
        if self.b < 0:
            raise PreconditionError(f"need b >= 0, got {self.b}")
        if not 0 < self.epsilon < 0.5:
            raise PreconditionError(f"need epsilon in (0, 1/2), got {self.epsilon}")
        if math.isfinite(self.diameter) and not self.diameter > 3 * self.R:
            raise PreconditionError(f"3R={3 * self.R} is not a proper radius for diam={self.diameter}")
        if self.K > 0 and 3 * self.R >= math.pi / math.sqrt(self.K):
            raise DomainError("3R must stay below pi/sqrt(K) when K > 0")
        self.comparison  # validates the overrides

    @property
    def curvature(self) -> CurvatureParams:
        return CurvatureParams(self.K, self.n)

    @property
    def defect(self) -> float:
        return ricci_defect(self.K)

    @property
    def rho_tilde(self) -> float:
        return min(self.rho, 3.0 * self.R / 16.0)

    @property
    def comparison(self) -> ComparisonConstants:
        return comparison_constants(self.n, D=self.D, sturm_C=self.sturm_C)


@dataclass(frozen=True)
class ExitBound:
    value: float
    raw: float
    log_raw: float
    vacuous: bool


def exit_constants(constants: ComparisonConstants):
    """``(log C0, C1)`` of the exit-time estimate."""
    D = constants.D
    log_c0 = math.log(20.0 / math.log(2.0)) + math.log(constants.sturm_C) + math.log(D) + EXIT_GAUSS * math.log(D) ** 2
    return log_c0, EXIT_C1


def exit_alpha_max(params: ProblemParams, rho_eff: float, R_eff: float) -> float:
    """Largest alpha admitted by the exit-time estimate."""
    D = params.comparison.D
    cap = rho_eff ** 2 / (6400.0 * (math.log(D) + R_eff * math.sqrt(params.defect)) ** 2)
    return min(R_eff ** 2, cap)


def exit_time_bound(params: ProblemParams, rho_eff: float, R_eff: float, alpha: float) -> ExitBound:
    """``min(1, C0 exp(C1 k R_eff^2 - rho_eff^2 / (20 alpha)))`` for P(tau_rho <= alpha)."""
    if rho_eff <= 0 or R_eff <= 0:
        raise PreconditionError("rho_eff and R_eff must be positive")
    amax = exit_alpha_max(params, rho_eff, R_eff)
    if not 0 < alpha <= amax * (1 + ALPHA_RTOL):
        raise ExitTimePreconditionError(f"alpha={alpha!r} outside (0, {amax!r}]")
    log_c0, c1 = exit_constants(params.comparison)
    log_raw = log_c0 + c1 * params.defect * R_eff ** 2 - rho_eff ** 2 / (20.0 * alpha)
    raw = math.exp(log_raw) if log_raw < 709.0 else math.inf
    return ExitBound(value=min(1.0, raw), raw=raw, log_raw=log_raw, vacuous=log_raw >= 0.0)


def lambda_ms_lower(params: ProblemParams, rho_eff: float) -> float:
    """Lower bound for the Dirichlet bottom outside an (R, rho_eff)-dense set."""
    if not 0 < rho_eff < params.R:
        raise PreconditionError(f"need 0 < rho_eff < R, got {rho_eff}")
    return lambda_lower_bound(params.curvature, rho_eff / 2.0, 3.0 * params.R, params.comparison)


def lambda_ms_upper(params: ProblemParams) -> float:
    """``64 D e^{sqrt(k) R} / R^2``, the test-function upper bound."""
    return 64.0 * params.comparison.D * math.exp(math.sqrt(params.defect) * params.R) / params.R ** 2


def compute_E0(params: ProblemParams) -> float:
    """``(1 - a) eps_t Lambda / 2 - b`` with ``eps_t = 2 eps``; may be negative."""
    lam = lambda_ms_lower(params, params.rho_tilde / 4.0)
    return (1.0 - params.a) * (2.0 * params.epsilon) * lam / 2.0 - params.b


@dataclass
class ConstantReport:
    """Every intermediate of the kappa / E0 chain. Field names are stable."""

    rho_tilde: float
    Lambda: float
    C0: float
    log_C0: float
    C1: float
    D: float
    c_n: float
    sturm_C: float
    alpha1: float
    alpha2: float
    alpha3: float
    alpha_star: float
    beta: float
    lambda_upper: float
    lambda_lower: float
    log_p_at_alpha_star: float
    exit_bound_at_alpha_star: float
    E0: float
    kappa: float
    c_chain: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    lambda_numeric: Optional[float] = None
    alpha_star_numeric: Optional[float] = None
    kappa_numeric: Optional[float] = None

    @property
    def vacuous(self) -> bool:
        return not (self.kappa > 0 and self.E0 > 0)

    def to_dict(self) -> dict:
        return asdict(self)


def _alpha2(params, Lambda, lam_up, log_c0, c1, eps_t):
    rt = params.rho_tilde
    log_arg = (
        log_c0 + math.log1p(math.exp(-log_c0)) - math.log(1.0 - eps_t) - math.log(Lambda)
        + rt ** 2 * lam_up - 2.0 * math.log(rt)
    )
    return rt ** 2 / (320.0 * (abs(log_arg) + c1 * params.defect * rt ** 2))


def _beta(params, alpha, c1):
    rt = params.rho_tilde
    return (1.0 - params.a) / alpha * (1.0 / (320.0 * alpha) - c1 * params.defect) * rt ** 2


def _log_p(params, alpha, lam_up, log_c0, c1):
    # p = e^{rt^2 lam} / rt^2 * (1 + C0) * e^{(-1/(320 alpha) + C1 k) rt^2}
    rt = params.rho_tilde
    return (rt ** 2 * lam_up - 2.0 * math.log(rt) + log_c0 + math.log1p(math.exp(-log_c0))
            + (-1.0 / (320.0 * alpha) + c1 * params.defect) * rt ** 2)


def _display_constants(params, const, log_c0, c1):
    """Constants of the closed-form kappa display, matched to the proof's c-chain."""
    lnD = math.log(const.D)
    c0 = 20.0
    log_c1 = math.log(20.0) + log_c0 + math.log1p(math.exp(-log_c0))
    c1p = 12800.0 * lnD ** 2
    c2 = 20.0 * max(16.0 * c1, 640.0)
    c3 = 194.0 * const.D / 16.0
    chain = {
        "c0": c0,
        "log_c1": log_c1,
        "c1_prime": c1p,
        "c2": c2,
        "c3": c3,
        # derived by matching the display, not stated in the source
        "C5_derived": const.c_n / c0 ** 2,
        "log_C6_derived": log_c1 - math.log(const.c_n),
        "C7_derived": c1p / c0,
        "C8_derived": c2 / c0,
        "C9_derived": c3 / c0,
    }
    cp = params.curvature
    rt = params.rho_tilde
    m = min(sn_k(cp, rt / 8.0), sn_k(cp, 3 * params.R)) ** (params.n - 2)
    v = vol_k(cp, 3 * params.R)
    eps = params.epsilon
    bracket = (
        abs(chain["log_C6_derived"] + math.log(v / ((1 - 2 * eps) * rt ** 2 * m)))
        + chain["C7_derived"]
        + chain["C8_derived"] * params.rho ** 2 * params.defect
        + chain["C9_derived"] * math.exp(math.sqrt(params.defect) * params.R)
    )
    chain["kappa_display"] = chain["C5_derived"] * rt ** 2 * m / v * eps / bracket ** 2
    return chain


def compute_kappa(params: ProblemParams, lambda_numeric: Optional[float] = None) -> ConstantReport:
    """Run the full chain and return every intermediate.

    ``lambda_numeric`` replaces the upper bound on the Dirichlet bottom of the
    shrunken set inside ``alpha2`` and yields a second, sharper kappa.
    """
    const = params.comparison
    rt = params.rho_tilde
    k = params.defect
    eps_t = 2.0 * params.epsilon
    log_c0, c1 = exit_constants(const)

    Lambda = lambda_ms_lower(params, rt / 4.0)
    lam_up = lambda_ms_upper(params)

    alpha1 = math.inf if k == 0 else 1.0 / (320.0 * c1 * k)
    alpha2 = _alpha2(params, Lambda, lam_up, log_c0, c1, eps_t)
    alpha3 = rt ** 2 / (3200.0 * (math.log(const.D) + rt * math.sqrt(k)) ** 2)
    alpha_star = min(alpha1, alpha2, alpha3)
    beta = _beta(params, alpha_star, c1)

    E0 = (1.0 - params.a) * Lambda * eps_t / 2.0 - params.b
    kappa = ((1.0 - params.a) * eps_t * Lambda - (E0 + params.b)) / beta

    log_p = _log_p(params, alpha_star, lam_up, log_c0, c1)
    exit_at = exit_time_bound(params, rt, rt, alpha_star / 2.0)

    flags = []
    if beta <= 0:
        flags.append("beta_nonpositive")
    if kappa <= 0:
        flags.append("kappa_nonpositive")
    if E0 <= 0:
        flags.append("E0_nonpositive")
    if kappa > 0:
        # the chain guarantees these; a failure is a bug, not bad input
        assert beta > 0
        assert alpha_star <= alpha1
        assert alpha_star / 2.0 <= exit_alpha_max(params, rt, rt) * (1 + ALPHA_RTOL)
        assert Lambda - math.exp(log_p) >= eps_t * Lambda * (1 - 1e-9)

    report = ConstantReport(
        rho_tilde=rt,
        Lambda=Lambda,
        C0=math.exp(log_c0) if log_c0 < 709.0 else math.inf,
        log_C0=log_c0,
        C1=c1,
        D=const.D,
        c_n=const.c_n,
        sturm_C=const.sturm_C,
        alpha1=alpha1,
        alpha2=alpha2,
        alpha3=alpha3,
        alpha_star=alpha_star,
        beta=beta,
        lambda_upper=lam_up,
        lambda_lower=lambda_ms_lower(params, params.rho),
        log_p_at_alpha_star=log_p,
        exit_bound_at_alpha_star=exit_at.value,
        E0=E0,
        kappa=kappa,
        c_chain=_display_constants(params, const, log_c0, c1),
        flags=flags,
    )
    if lambda_numeric is not None:
        if not lambda_numeric > 0:
            raise PreconditionError("numeric Dirichlet bottom must be positive")
        a2 = _alpha2(params, Lambda, lambda_numeric, log_c0, c1, eps_t)
        a_star = min(alpha1, a2, alpha3)
        report.lambda_numeric = lambda_numeric
        report.alpha_star_numeric = a_star
        report.kappa_numeric = ((1.0 - params.a) * eps_t * Lambda - (E0 + params.b)) / _beta(params, a_star, c1)
    return report


def check_nontrivial(report: ConstantReport, params: ProblemParams) -> dict:
    """Which hypotheses of the main inequality are met by the computed constants."""
    rt = params.rho_tilde
    alpha = report.alpha_star
    ok_alpha = (
        alpha <= report.alpha1
        and alpha / 2.0 <= rt ** 2
        and alpha / 2.0 <= exit_alpha_max(params, rt, rt) * (1 + ALPHA_RTOL)
    )
    return {
        "E0_positive": report.E0 > 0,
        "kappa_positive": report.kappa > 0,
        "beta_positive": report.beta > 0,
        "alpha_preconditions_met": bool(ok_alpha),
    }
