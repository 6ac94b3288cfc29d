"""Finite-dimensional checks of the lifting inequality and the kappa formula.

Forms are real symmetric matrices on R^dim with the Euclidean norm.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy import optimize, stats

from .errors import DomainError, PreconditionError

PSD_TOL = 1e-12


def _lmin(A) -> float:
    return float(sla.eigvalsh(A, subset_by_index=[0, 0])[0])


def _lmax(A) -> float:
    n = A.shape[0]
    return float(sla.eigvalsh(A, subset_by_index=[n - 1, n - 1])[0])


def _sym(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + A.T)


@dataclass(frozen=True, eq=False)
class QuadraticFormTuple:
    """``(h1, h2+, h2-, h3, a', b')`` with ``h2- <= a'(h1 + h2+) + b'``."""

    h1: np.ndarray
    h2plus: np.ndarray
    h2minus: np.ndarray
    h3: np.ndarray
    a_prime: float
    b_prime: float

    def __post_init__(self):
        n = self.h1.shape[0]
        for name in ("h1", "h2plus", "h2minus", "h3"):
            m = getattr(self, name)
            if m.shape != (n, n) or not np.array_equal(m, m.T):
                raise DomainError(f"{name} must be a symmetric {n}x{n} matrix")
        for name in ("h2plus", "h2minus", "h3"):
            m = getattr(self, name)
            if _lmin(m) < -PSD_TOL * max(1.0, np.abs(m).max()):
                raise DomainError(f"{name} must be positive semidefinite")
        if not 0 < self.a_prime < 1 or self.b_prime < 0:
            raise DomainError("need a' in (0, 1) and b' >= 0")
        if self.relative_bound_excess() > PSD_TOL * max(1.0, np.abs(self.h1).max()):
            raise DomainError("relative bound h2- <= a'(h1 + h2+) + b' fails")

    @property
    def dim(self) -> int:
        return self.h1.shape[0]

    @property
    def H(self) -> np.ndarray:
        return self.h1 + self.h2plus - self.h2minus

    def relative_bound_excess(self) -> float:
        """``lambda_max(h2- - a'(h1 + h2+) - b')``; nonpositive when the bound holds."""
        M = self.h2minus - self.a_prime * (self.h1 + self.h2plus) - self.b_prime * np.eye(self.dim)
        return _lmax(_sym(M))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for m in (self.h1, self.h2plus, self.h2minus, self.h3):
            h.update(np.ascontiguousarray(m, dtype="<f8").tobytes())
        h.update(np.array([self.a_prime, self.b_prime], dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("h1", "h2plus", "h2minus", "h3")} | {
            "a_prime": self.a_prime, "b_prime": self.b_prime}


def _random_psd(rng, n, rank, scale):
    B = rng.standard_normal((n, rank))
    return _sym(B @ B.T * (scale / max(rank, 1)))


def random_instance(dim: int, seed, spectral_scale: float = 1.0, a_prime: Optional[float] = None,
                    margin: float = 1e-6) -> QuadraticFormTuple:
    """Random tuple satisfying the relative bound by construction.

    ``h2- = a' theta (G - c) + W`` with ``G = h1 + h2+``, ``c = lambda_min(G)``,
    ``theta in [0, 1]`` and small PSD ``W``; then
    ``h2- - a' G <= -a' c + |W|``, and ``b'`` absorbs the right side.
    """
    if dim < 2:
        raise DomainError("dim must be at least 2")
    rng = np.random.default_rng(seed)
    Q = stats.ortho_group.rvs(dim, random_state=rng) if dim > 1 else np.eye(1)
    lam = spectral_scale * rng.uniform(-0.5, 2.0, dim)
    h1 = _sym(Q @ np.diag(lam) @ Q.T)
    h2p = _random_psd(rng, dim, int(rng.integers(1, dim + 1)), spectral_scale * rng.uniform(0.0, 1.0))
    h3 = _random_psd(rng, dim, int(rng.integers(1, dim + 1)), rng.uniform(0.1, 2.0))
    a = float(rng.uniform(0.05, 0.95)) if a_prime is None else float(a_prime)
    theta = float(rng.uniform(0.0, 1.0))
    W = _random_psd(rng, dim, int(rng.integers(1, dim + 1)), spectral_scale * 0.1 * rng.uniform(0.0, 1.0))
    G = h1 + h2p
    c = _lmin(G)
    h2m = _sym(a * theta * (G - c * np.eye(dim)) + W)
    w = _lmax(W)
    b = max(0.0, w - a * c) + margin * spectral_scale
    return QuadraticFormTuple(h1=h1, h2plus=h2p, h2minus=h2m, h3=h3, a_prime=a, b_prime=b)


def gamma(tup: QuadraticFormTuple, beta: float) -> float:
    """Bottom of ``h1 + beta h3``."""
    if beta <= 0:
        raise DomainError("beta must be positive")
    return _lmin(tup.h1 + beta * tup.h3)


def lifting_threshold(tup: QuadraticFormTuple, E0: float, beta: float) -> float:
    a = tup.a_prime
    return ((1 - a) * gamma(tup, beta / (1 - a)) - E0 - tup.b_prime) / beta


def _cone_minimum(h3, Hs, lam_min_H):
    """``min h3(x)`` over unit x with ``Hs(x) <= 0`` via the S-lemma dual.

    ``g(mu) = lambda_min(h3 + mu Hs)`` is concave and lower-bounds the minimum
    for every ``mu >= 0``; strong duality holds when ``Hs`` is indefinite.
    """
    w, U = sla.eigh(Hs)
    v = U[:, 0]
    top = float(v @ h3 @ v) / max(-lam_min_H, 1e-300)

    def neg(mu):
        return -_lmin(h3 + mu * Hs)

    if top <= 0:
        return -neg(0.0)
    res = optimize.minimize_scalar(neg, bounds=(0.0, top), method="bounded",
                                   options={"xatol": 1e-12 * max(1.0, top)})
    return max(-res.fun, -neg(0.0))


def verify_lifting(tup: QuadraticFormTuple, E0: float, beta: float, num_samples: int = 100, seed=0,
                   rtol: float = 1e-9) -> dict:
    """Check ``h3(x) >= threshold |x|^2`` on ``Y = {H(x) <= E0 |x|^2}``.

    Three minima of ``h3`` are compared with the threshold: on the spectral
    subspace of H below E0 (restricted eigenproblem), on the whole cone Y
    (S-lemma), and over random samples of Y.
    """
    if beta <= 0:
        raise DomainError("beta must be positive")
    H = _sym(tup.H)
    w, U = sla.eigh(H)
    thr = lifting_threshold(tup, E0, beta)
    report = {"E0": E0, "beta": beta, "threshold": thr, "dim": tup.dim}
    low = w <= E0
    if not low.any():
        report.update(vacuous=True, passed=True, max_violation=0.0, status="vacuous (Y = {0})")
        return report
    h3 = tup.h3
    Ul = U[:, low]
    sub_min = _lmin(_sym(Ul.T @ h3 @ Ul))
    Hs = H - E0 * np.eye(tup.dim)
    cone_min = _cone_minimum(h3, Hs, w[0] - E0) if w[0] < E0 else sub_min

    rng = np.random.default_rng(seed)
    gap = w - E0
    samples = [U[:, 0]]
    for _ in range(num_samples):
        c = rng.standard_normal(tup.dim)
        if rng.random() < 0.5:
            c[~low] = 0.0
        else:
            pos = float(np.sum(gap[~low] * c[~low] ** 2))
            neg = float(-np.sum(gap[low] * c[low] ** 2))
            if pos > neg:
                c[~low] *= math.sqrt(neg / pos) * rng.random()
        x = U @ c
        samples.append(x / np.linalg.norm(x))
    X = np.array(samples)
    q3 = np.einsum("ij,jk,ik->i", X, h3, X)
    qH = np.einsum("ij,jk,ik->i", X, H, X)
    inY = qH <= E0 + 1e-12 * max(1.0, abs(E0))
    sample_min = float(q3[inY].min())
    scale = max(1.0, abs(thr), float(np.abs(h3).max()))
    viol = max(thr - sub_min, thr - cone_min, thr - sample_min)
    report.update(
        vacuous=False, subspace_min=sub_min, cone_min=cone_min, sample_min=sample_min,
        samples_in_Y=int(inY.sum()), max_violation=viol, passed=bool(viol <= rtol * scale), status="checked",
    )
    return report


def lifting_suite(num_instances: int = 500, dims=(2, 30), num_samples: int = 100, seed: int = 0) -> dict:
    """Random instances with random E0 inside the spectrum of H and log-uniform beta."""
    root = np.random.SeedSequence(seed)
    results = []
    for k, child in enumerate(root.spawn(num_instances)):
        rng = np.random.default_rng(child)
        dim = int(rng.integers(dims[0], dims[1] + 1))
        tup = random_instance(dim, child.spawn(1)[0], spectral_scale=float(10 ** rng.uniform(-1, 1)))
        w = sla.eigvalsh(tup.H)
        # mostly low E0 so that the threshold is often positive
        E0 = float(w[0] + (w[-1] - w[0]) * rng.uniform(-0.05, 1.0) ** 3)
        beta = float(10 ** rng.uniform(-1, 3))
        r = verify_lifting(tup, E0, beta, num_samples, seed=child.spawn(1)[0])
        r["instance"] = k
        results.append(r)
    viol = [r for r in results if not r["passed"]]
    return {
        "instances": num_instances,
        "vacuous": sum(r["vacuous"] for r in results),
        "positive_threshold": sum((not r["vacuous"]) and r["threshold"] > 0 for r in results),
        "violations": len(viol),
        "max_violation": max(r["max_violation"] for r in results if not r["vacuous"]),
        "passed": not viol,
        "results": results,
    }


def _restrict(h, keep):
    idx = np.flatnonzero(keep)
    return h[np.ix_(idx, idx)], idx


def coupling_curve(h1, mask, betas: Sequence[float]) -> dict:
    """``lambda_min(h1 + beta 1_mask)`` along ``betas`` and the Dirichlet limit off ``mask``."""
    h1 = _sym(h1)
    m = np.asarray(mask, dtype=bool)
    vals = [_lmin(h1 + b * np.diag(m.astype(float))) for b in betas]
    limit = _lmin(_restrict(h1, ~m)[0])
    return {"betas": list(map(float, betas)), "lambda": vals, "limit": limit}


def kappa_matrix_check(h1, S_mask, S_rho_mask, a: float, b: float, E0: float, beta: float, alpha0: float,
                       alpha: Optional[float] = None, sup_exit_prob: Optional[float] = None, tol: float = 1e-10) -> dict:
    """Matrix version of the kappa chain with ``h3 = 1_{S_rho}``.

    ``kappa_claimed`` uses exact ``mu_0``, ``lambda_{M,S_rho}`` and the exact
    semigroup difference at ``t = beta_a / 2`` in place of its probabilistic
    bound. With ``alpha`` and ``sup_exit_prob`` given, the probabilistic kappa is
    reported as well.
    """
    h1 = _sym(h1)
    S = np.asarray(S_mask, dtype=bool)
    Sr = np.asarray(S_rho_mask, dtype=bool)
    if np.any(S & ~Sr):
        raise PreconditionError("S must lie inside S_rho")
    if not 0 <= a < 1 or b < 0 or beta <= 0 or alpha0 <= 0:
        raise DomainError("need a in [0,1), b >= 0, beta > 0, alpha0 > 0")
    if Sr.all():
        raise DomainError("S_rho is the whole space; the Dirichlet problem off S_rho is empty")
    h3 = np.diag(Sr.astype(float))
    beta_a = beta / (1 - a)
    lam_ba = _lmin(h1 + beta_a * h3)
    lhs = ((1 - a) * lam_ba - E0 - b) / beta
    hS, keep = _restrict(h1, ~S)
    mu0 = _lmin(hS)
    lam_dir = _lmin(_restrict(h1, ~Sr)[0])
    t = beta_a / 2
    full = sla.expm(-alpha0 * (h1 / 2 + t * h3))
    part = sla.expm(-alpha0 * (hS / 2 + t * np.diag(Sr[keep].astype(float))))
    diff = full.copy()
    diff[np.ix_(keep, keep)] -= part
    dnorm = float(np.linalg.norm(_sym(diff), 2))
    kappa_claimed = ((1 - a) * (mu0 - 2.0 / alpha0 * math.exp(alpha0 * lam_dir / 2) * dnorm) - E0 - b) / beta
    out = {
        "lambda_beta_a": lam_ba, "mu0": mu0, "lambda_M_Srho": lam_dir, "t": t, "semigroup_difference": dnorm,
        "lhs": lhs, "kappa_claimed": kappa_claimed, "slack": lhs - kappa_claimed,
        "passed": bool(lhs >= kappa_claimed - tol * max(1.0, abs(lhs))),
        "chain": bool(lam_ba <= _lmin(hS + beta_a * np.diag(Sr[keep].astype(float))) + tol
                      and _lmin(hS + beta_a * np.diag(Sr[keep].astype(float))) <= lam_dir + tol),
    }
    if alpha is not None and sup_exit_prob is not None:
        prob = math.exp(-beta * alpha / (2 * (1 - a))) + math.sqrt(sup_exit_prob)
        out["kappa_probabilistic"] = ((1 - a) * (mu0 - 2.0 / alpha0 * math.exp(alpha0 * lam_dir / 2) * prob)
                                      - E0 - b) / beta
        out["semigroup_bound"] = prob
    return out
