"""Comparison geometry of the constant-curvature model spaces M_K^n.

Two sign conventions coexist:

* ``sn_k``, ``omega_k``, ``vol_k``, ``lambda_lower_bound`` read ``cp.K`` as a
  signed lower bound ``Ric >= K`` (K > 0 is the sphere, K < 0 hyperbolic).
* ``doubling_constant``, ``volume_growth_bound`` and ``heat_kernel_upper`` read
  ``cp.K`` as the defect in ``Ric >= -K`` with ``K >= 0``. Use
  :func:`ricci_defect` to convert a signed bound into this convention.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import DomainError, PreconditionError

# |K| r^2 below this switches sn_K to its Taylor series
SERIES_SWITCH = 1e-8
VOL_RTOL = 1e-10
LAMBDA_RTOL = 1e-8


@dataclass(frozen=True)
class CurvatureParams:
    """Lower Ricci bound ``K`` (1/length^2) and dimension ``n``."""

    K: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"dimension n must be an integer >= 2, got {self.n}")
        if not math.isfinite(self.K):
            raise DomainError(f"curvature K must be finite, got {self.K}")

    @property
    def conjugate_radius(self) -> float:
        """pi/sqrt(K) for K > 0, infinity otherwise."""
        return math.pi / math.sqrt(self.K) if self.K > 0 else math.inf


@dataclass(frozen=True)
class ComparisonConstants:
    """Dimension constants that the literature only asserts to exist.

    ``D`` is the volume-doubling constant, ``sturm_C`` the Gaussian heat-kernel
    prefactor, ``c_n`` the constant of the Lambda lower bound. Every downstream
    formula reads them from one instance of this class.
    """

    n: int
    D: float
    sturm_C: float
    c_n: float
    sharp_c_n: bool = False


def unit_sphere_area(n: int) -> float:
    """Surface measure of the unit (n-1)-sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def comparison_constants(n, D=None, sturm_C=None, sharp_c_n=False) -> ComparisonConstants:
    """Default constants, with optional overrides.

    ``c_n = (n-2) w_{n-1} / (2 (pi/2)^{n-1})`` covers every curvature sign;
    ``sharp_c_n=True`` selects ``(n-2) w_{n-1}``, valid only for K <= 0.
    """
    if int(n) != n or n < 2:
        raise DomainError(f"dimension must be an integer >= 2, got {n}")
    D = 2.0 ** (2 * n) if D is None else float(D)
    if D < 1.0:
        raise DomainError(f"doubling constant must be >= 1, got {D}")
    sturm_C = 2.0 ** (n + 4) if sturm_C is None else float(sturm_C)
    if sturm_C <= 0:
        raise DomainError("heat-kernel constant must be positive")
    area = unit_sphere_area(n)
    if n < 3:
        c_n = math.nan  # Lambda bound is undefined for n = 2
    elif sharp_c_n:
        c_n = (n - 2) * area
    else:
        c_n = (n - 2) * area / (2.0 * (math.pi / 2.0) ** (n - 1))
    return ComparisonConstants(n=n, D=D, sturm_C=sturm_C, c_n=c_n, sharp_c_n=sharp_c_n)


def ricci_defect(K: float) -> float:
    """Signed bound Ric >= K  ->  k >= 0 with Ric >= -k."""
    return max(-float(K), 0.0)


def _check_radius(cp: CurvatureParams, r: float):
    if r < 0:
        raise DomainError(f"radius must be nonnegative, got {r}")
    if cp.K > 0 and r >= cp.conjugate_radius:
        raise DomainError(f"r={r} is beyond the conjugate radius pi/sqrt(K)={cp.conjugate_radius}")


def _sn(K: float, r: float) -> float:
    x = K * r * r
    if abs(x) < SERIES_SWITCH:
        return r * (1.0 - x / 6.0 + x * x / 120.0 - x ** 3 / 5040.0 + x ** 4 / 362880.0)
    if K > 0:
        s = math.sqrt(K)
        return math.sin(s * r) / s
    s = math.sqrt(-K)
    return math.sinh(s * r) / s


def sn_k(cp: CurvatureParams, r: float) -> float:
    """Generalized sine, the solution of u'' + K u = 0, u(0) = 0, u'(0) = 1."""
    _check_radius(cp, r)
    return _sn(cp.K, float(r))


def sn_k_prime(cp: CurvatureParams, r: float) -> float:
    """Derivative of :func:`sn_k` in r."""
    _check_radius(cp, r)
    K = cp.K
    if K > 0:
        return math.cos(math.sqrt(K) * r)
    if K < 0:
        return math.cosh(math.sqrt(-K) * r)
    return 1.0


def omega_k(cp: CurvatureParams, r: float) -> float:
    """Volume density sn_K(r)^(n-1) of the model space."""
    return sn_k(cp, r) ** (cp.n - 1)


def vol_k(cp: CurvatureParams, R: float) -> float:
    """Volume of a ball of radius R in M_K^n."""
    if R <= 0:
        raise DomainError(f"ball radius must be positive, got {R}")
    _check_radius(cp, R)
    area = unit_sphere_area(cp.n)
    if cp.K == 0:
        return area * R ** cp.n / cp.n
    K, p = cp.K, cp.n - 1
    val, _ = integrate.quad(lambda s: _sn(K, s) ** p, 0.0, R, epsabs=0.0, epsrel=VOL_RTOL, limit=200)
    return area * val


@dataclass(frozen=True)
class RadialProfile:
    """Volume density along a geodesic ray, on ``[0, r_max]``.

    Build one with :meth:`model` or :meth:`from_samples`; arbitrary callables
    are accepted directly.
    """

    r_max: float
    density: Callable[[float], float] = field(compare=False)
    label: str = "custom"

    @classmethod
    def model(cls, cp: CurvatureParams, r_max: Optional[float] = None) -> "RadialProfile":
        r_max = cp.conjugate_radius if r_max is None else r_max
        if cp.K > 0 and r_max > cp.conjugate_radius:
            raise DomainError("model profile cannot extend past pi/sqrt(K)")
        K, p = cp.K, cp.n - 1
        return cls(r_max=r_max, density=lambda r: _sn(K, r) ** p, label=f"model(K={cp.K}, n={cp.n})")

    @classmethod
    def constant(cls, r_max: float, value: float = 1.0) -> "RadialProfile":
        return cls(r_max=r_max, density=lambda r: value, label=f"constant({value})")

    @classmethod
    def from_samples(cls, r, w) -> "RadialProfile":
        """Piecewise-linear interpolation of sampled densities."""
        r = np.asarray(r, dtype=float)
        w = np.asarray(w, dtype=float)
        if r.ndim != 1 or r.shape != w.shape or np.any(np.diff(r) <= 0):
            raise DomainError("samples need strictly increasing radii and matching densities")
        if np.any(w < 0):
            raise DomainError("densities must be nonnegative")
        return cls(r_max=float(r[-1]), density=lambda x: float(np.interp(x, r, w)), label="sampled")


def lambda_functional(profile: RadialProfile, rho: float, R: float) -> float:
    """Inverse of the double integral of w(r)/w(s) over rho <= s <= r <= R."""
    if not 0 <= rho < R:
        raise PreconditionError(f"need 0 <= rho < R, got rho={rho}, R={R}")
    if R > profile.r_max * (1 + 1e-12):
        raise PreconditionError(f"R={R} exceeds the profile domain r_max={profile.r_max}")
    w = profile.density

    def inv_w(s):
        val = w(s)
        if val <= 0:
            return math.inf
        return 1.0 / val

    def inner(r):
        val, _ = integrate.quad(inv_w, rho, r, epsabs=0.0, epsrel=LAMBDA_RTOL, limit=200)
        return val

    with warnings.catch_warnings(record=True) as caught, np.errstate(all="ignore"):
        warnings.simplefilter("always", integrate.IntegrationWarning)
        total, _ = integrate.quad(lambda r: w(r) * inner(r), rho, R, epsabs=0.0, epsrel=LAMBDA_RTOL, limit=200)
    diverged = any(issubclass(c.category, integrate.IntegrationWarning) for c in caught)
    if diverged or not math.isfinite(total):
        raise DomainError("inner integral of 1/w diverges; the density vanishes on the interval")
    return 1.0 / total


def lambda_lower_bound(cp: CurvatureParams, rho: float, R: float, constants=None) -> float:
    """Comparison lower bound ``c_n min(sn(rho), sn(R))^(n-2) / Vol_K(R)`` for Lambda."""
    if cp.n < 3:
        raise DomainError("lower bound for Lambda requires n >= 3")
    if not 0 < rho < R:
        raise PreconditionError(f"need 0 < rho < R, got rho={rho}, R={R}")
    constants = comparison_constants(cp.n) if constants is None else constants
    if constants.sharp_c_n and cp.K > 0:
        raise DomainError("sharp c_n is only valid for K <= 0")
    m = min(sn_k(cp, rho), sn_k(cp, R))
    return constants.c_n * m ** (cp.n - 2) / vol_k(cp, R)


def _defect(cp: CurvatureParams) -> float:
    if cp.K < 0:
        raise DomainError("this bound takes K >= 0 in the convention Ric >= -K")
    return cp.K


def doubling_constant(cp: CurvatureParams, R: float, constants=None) -> float:
    """Volume doubling factor ``D e^{sqrt(K) R}`` valid for radii up to R (Ric >= -K)."""
    K = _defect(cp)
    if R <= 0:
        raise DomainError("R must be positive")
    D = (comparison_constants(cp.n) if constants is None else constants).D
    return D * math.exp(math.sqrt(K) * R)


def volume_growth_bound(cp: CurvatureParams, R: float, T: float, constants=None) -> float:
    """Factor ``D exp(8 (ln D + R sqrt K) T / R)`` bounding Vol B(x,T) / Vol B(x,R)."""
    K = _defect(cp)
    if R <= 0 or T <= 0:
        raise DomainError("R and T must be positive")
    D = (comparison_constants(cp.n) if constants is None else constants).D
    return D * math.exp(8.0 * (math.log(D) + R * math.sqrt(K)) * T / R)


def heat_kernel_upper(cp: CurvatureParams, R: float, t: float, d: float, vol_ball: float, constants=None) -> float:
    """Gaussian upper bound ``C e^{K R^2} / vol_ball * exp(-d^2 / (5 t))`` for 0 < t <= R^2.

    ``vol_ball`` is the volume of B(x, sqrt(t)) on the manifold in question.
    """
    K = _defect(cp)
    if not 0 < t <= R * R:
        raise PreconditionError(f"need 0 < t <= R^2, got t={t}, R^2={R * R}")
    if d < 0 or vol_ball <= 0:
        raise DomainError("need d >= 0 and vol_ball > 0")
    C = (comparison_constants(cp.n) if constants is None else constants).sturm_C
    return C * math.exp(K * R * R) / vol_ball * math.exp(-d * d / (5.0 * t))
