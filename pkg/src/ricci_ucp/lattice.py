"""Discrete Laplacians, Dirichlet restrictions, spectra and semigroups.

An operator is stored as a symmetric *form* matrix ``K`` (the discrete energy
``u^T K u``) together with lumped vertex weights ``m``. The operator itself is
``M^{-1} K``; it is self-adjoint in the weighted inner product
``<u, v>_m = sum m_i u_i v_i``. Numerical work happens on the similar symmetric
matrix ``M^{-1/2} K M^{-1/2}``.

Energies are grid energies: the torus Laplacian carries the ``1/h^2`` scaling,
so its low eigenvalues approximate continuum Laplace eigenvalues to O(h^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DomainError, PreconditionError
from .model_geometry import CurvatureParams, RadialProfile

DENSE_MAX = 500
EXPM_MAX = 1024


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Weighted graph operator ``M^{-1} K``.

    ``vertex_ids`` are indices into the unrestricted parent mesh, so operators
    obtained by :func:`dirichlet_restrict` can be embedded back into it.
    """

    stiffness: sp.csr_matrix
    measure: np.ndarray
    mesh_h: object
    geometry: dict
    boundary: np.ndarray
    vertex_ids: np.ndarray

    def __post_init__(self):
        n = self.stiffness.shape[0]
        if self.stiffness.shape != (n, n) or self.measure.shape != (n,):
            raise DomainError("stiffness must be square and match the measure length")
        if np.any(self.measure <= 0):
            raise DomainError("vertex weights must be positive")
        if (abs(self.stiffness - self.stiffness.T) > 0).nnz:
            raise DomainError("stiffness matrix is not exactly symmetric")

    @property
    def size(self) -> int:
        return self.stiffness.shape[0]

    def symmetric_matrix(self) -> sp.csr_matrix:
        """``M^{-1/2} K M^{-1/2}``, similar to the operator."""
        s = sp.diags(1.0 / np.sqrt(self.measure))
        return (s @ self.stiffness @ s).tocsr()

    def operator_matrix(self) -> sp.csr_matrix:
        """``M^{-1} K`` (not symmetric when the measure is non-uniform)."""
        return (sp.diags(1.0 / self.measure) @ self.stiffness).tocsr()

    def apply(self, u):
        return self.stiffness @ u / self.measure

    def to_dict(self) -> dict:
        coo = self.stiffness.tocoo()
        return {
            "schema": "ricci-ucp/1/operator",
            "size": self.size,
            "rows": coo.row.tolist(),
            "cols": coo.col.tolist(),
            "vals": coo.data.tolist(),
            "measure": self.measure.tolist(),
            "mesh_h": np.asarray(self.mesh_h).tolist(),
            "geometry": self.geometry,
            "boundary": self.boundary.tolist(),
            "vertex_ids": self.vertex_ids.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteOperator":
        n = data["size"]
        K = sp.coo_matrix((data["vals"], (data["rows"], data["cols"])), shape=(n, n)).tocsr()
        return cls(
            stiffness=K,
            measure=np.asarray(data["measure"], dtype=float),
            mesh_h=data["mesh_h"],
            geometry=dict(data["geometry"]),
            boundary=np.asarray(data["boundary"]),
            vertex_ids=np.asarray(data["vertex_ids"], dtype=np.int64),
        )


@dataclass
class SpectralDecomposition:
    """Lowest eigenpairs; eigenvector columns are orthonormal in ``<., .>_m``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    measure: np.ndarray
    complete: bool = False  # True when every eigenpair of the operator is present

    def summary_rows(self):
        return [{"index": i, "eigenvalue": float(lam), "residual": float(r)}
                for i, (lam, r) in enumerate(zip(self.eigenvalues, self.residuals))]


def _periodic_path(N: int) -> sp.csr_matrix:
    main = 2.0 * np.ones(N)
    off = -np.ones(N - 1)
    L = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    L[0, N - 1] = -1.0
    L[N - 1, 0] = -1.0
    return L.tocsr()


def build_torus_laplacian(d: int, N_side: int, side: float) -> DiscreteOperator:
    """(2d+1)-point periodic Laplacian on the flat torus ``[0, side)^d``.

    Vertices are numbered in C order of the grid multi-index.
    """
    if d not in (1, 2, 3):
        raise DomainError("torus dimension must be 1, 2 or 3")
    if N_side < 4:
        raise DomainError("need at least 4 points per side")
    h = side / N_side
    L1 = _periodic_path(N_side)
    eye = sp.identity(N_side, format="csr")
    L = sp.csr_matrix((N_side ** d, N_side ** d))
    for axis in range(d):
        factors = [L1 if j == axis else eye for j in range(d)]
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        L = L + term
    w = h ** d
    K = (L * (w / h ** 2)).tocsr()
    K.sum_duplicates()
    n = N_side ** d
    return DiscreteOperator(
        stiffness=K,
        measure=np.full(n, w),
        mesh_h=h,
        geometry={"kind": "torus", "d": d, "N_side": N_side, "side": side},
        boundary=np.array(["interior"] * n),
        vertex_ids=np.arange(n),
    )


def build_radial_operator(cp: Optional[CurvatureParams], rho: float, R: float, N: int,
                          profile: Optional[RadialProfile] = None) -> DiscreteOperator:
    """Weighted 1D operator ``-(1/w)(w u')'`` on ``[rho, R]``.

    Dirichlet at ``rho`` (the node is removed), Neumann at ``R`` through a half
    cell, which is the symmetric form of the mirrored ghost point. ``w`` is the
    model density of ``cp`` unless ``profile`` is given.
    """
    if profile is None:
        if cp is None:
            raise DomainError("need curvature parameters or a radial profile")
        if cp.K > 0 and R >= cp.conjugate_radius:
            raise DomainError("R must stay below pi/sqrt(K)")
        profile = RadialProfile.model(cp, R)
    if not 0 <= rho < R:
        raise PreconditionError(f"need 0 <= rho < R, got rho={rho}, R={R}")
    if N < 16:
        raise DomainError("need N >= 16 cells")
    w = np.vectorize(profile.density, otypes=[float])
    h = (R - rho) / N
    nodes = rho + h * np.arange(N + 1)
    mids = rho + h * (np.arange(N) + 0.5)
    cw = w(mids) / h  # edge (i, i+1) conductance
    if np.any(cw <= 0):
        raise DomainError("density vanishes at a cell midpoint")
    # unknowns are nodes 1..N
    diag = cw.copy()
    diag[:-1] += cw[1:]
    K = sp.diags([-cw[1:], diag, -cw[1:]], [-1, 0, 1], format="csr")
    m = w(nodes[1:]) * h
    m[-1] *= 0.5
    boundary = np.array(["interior"] * N)
    boundary[-1] = "neumann"
    return DiscreteOperator(
        stiffness=K,
        measure=m,
        mesh_h=h,
        geometry={"kind": "radial", "K": None if cp is None else cp.K, "n": None if cp is None else cp.n,
                  "rho": rho, "R": R, "N": N, "profile": profile.label},
        boundary=boundary,
        vertex_ids=np.arange(1, N + 1),
    )


def dirichlet_restrict(op: DiscreteOperator, S_mask) -> DiscreteOperator:
    """Drop the vertices of ``S_mask`` (Dirichlet condition on them)."""
    S_mask = np.asarray(S_mask, dtype=bool)
    if S_mask.shape != (op.size,):
        raise DomainError("mask length must equal the operator size")
    keep = ~S_mask
    if not keep.any():
        raise DomainError("restriction removes every vertex")
    idx = np.flatnonzero(keep)
    K = op.stiffness[idx][:, idx].tocsr()
    return replace(op, stiffness=K, measure=op.measure[idx], boundary=op.boundary[idx], vertex_ids=op.vertex_ids[idx])


def add_potential(op: DiscreteOperator, V) -> DiscreteOperator:
    """Operator plus multiplication by ``V``."""
    V = np.broadcast_to(np.asarray(V, dtype=float), (op.size,))
    if not np.all(np.isfinite(V)):
        raise DomainError("potential must be finite")
    K = (op.stiffness + sp.diags(op.measure * V)).tocsr()
    return replace(op, stiffness=K)


def _gershgorin_lower(A: sp.csr_matrix) -> float:
    d = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - off))


def _finish(op, lam, W, complete):
    A = op.symmetric_matrix()
    order = np.argsort(lam)
    lam, W = lam[order], W[:, order]
    res = np.linalg.norm(A @ W - W * lam, axis=0) / np.linalg.norm(W, axis=0)
    V = W / np.sqrt(op.measure)[:, None]
    return SpectralDecomposition(eigenvalues=lam, eigenvectors=V, residuals=res, measure=op.measure, complete=complete)


def lowest_eigenpairs(op: DiscreteOperator, k: int, tol: float = 1e-10, method: str = "auto") -> SpectralDecomposition:
    """The ``k`` smallest eigenpairs.

    ``method`` is ``"dense"`` (LAPACK), ``"sparse"`` (shift-invert Lanczos with
    the shift just below the Gershgorin bound, so the eigenvalues nearest the
    shift are the lowest ones) or ``"auto"`` (dense up to 500 vertices).
    """
    N = op.size
    if not 1 <= k <= N:
        raise DomainError(f"need 1 <= k <= N={N}, got {k}")
    if method == "auto":
        method = "dense" if (N <= DENSE_MAX or k >= N - 1) else "sparse"
    if method == "dense":
        A = op.symmetric_matrix().toarray()
        lam, W = sla.eigh(A, subset_by_index=[0, k - 1])
        return _finish(op, lam, W, complete=(k == N))
    if method != "sparse":
        raise DomainError(f"unknown eigensolver method {method!r}")
    if k >= N - 1:
        raise DomainError("sparse solver needs k < N - 1")
    A = op.symmetric_matrix()
    scale = float(abs(A).sum(axis=1).max())
    sigma = _gershgorin_lower(A) - 1e-6 * scale - 1e-12
    v0 = np.ones(N) + np.linspace(0.0, 1.0, N)
    try:
        lam, W = spla.eigsh(A, k=k, sigma=sigma, which="LM", tol=tol, maxiter=10 * N, v0=v0)
    except spla.ArpackNoConvergence as exc:
        best = None
        if exc.eigenvectors is not None and exc.eigenvectors.size:
            Wp = exc.eigenvectors
            best = float(np.max(np.linalg.norm(A @ Wp - Wp * exc.eigenvalues, axis=0)))
        raise ConvergenceError(f"shift-invert Lanczos did not converge after {10 * N} iterations", best) from exc
    return _finish(op, lam, W, complete=False)


def _interval(I) -> Tuple[float, float]:
    lo, hi = I
    lo = -math.inf if lo is None else float(lo)
    hi = math.inf if hi is None else float(hi)
    if lo > hi:
        raise DomainError("empty energy interval")
    return lo, hi


def _select(dec: SpectralDecomposition, I):
    lo, hi = _interval(I)
    if not dec.complete and dec.eigenvalues[-1] <= hi:
        raise PreconditionError(
            f"highest computed eigenvalue {dec.eigenvalues[-1]!r} <= sup I = {hi!r}: projector may be incomplete"
        )
    sel = (dec.eigenvalues >= lo) & (dec.eigenvalues <= hi)
    return dec.eigenvectors[:, sel]


def spectral_projector(dec: SpectralDecomposition, I) -> np.ndarray:
    """Dense matrix of the spectral projector onto eigenvalues in ``I = (lo, hi)``.

    ``P = V V^T M``; it is idempotent and self-adjoint for ``<., .>_m``.
    """
    V = _select(dec, I)
    return V @ (V.T * dec.measure)


def eigenpairs_covering(op: DiscreteOperator, sup_I: float, k0: int = 8, tol: float = 1e-10) -> SpectralDecomposition:
    """Eigenpairs with enough members that every eigenvalue <= sup_I is present."""
    k = k0
    while True:
        if k >= op.size - 1:
            k = op.size
        dec = lowest_eigenpairs(op, k, tol)
        if dec.complete or dec.eigenvalues[-1] > sup_I:
            return dec
        k *= 2


def verify_ucp(op: DiscreteOperator, S_mask, I, kappa: float, dec: Optional[SpectralDecomposition] = None) -> dict:
    """Check ``P 1_S P >= kappa P`` for the spectral projector P of ``op`` on ``I``.

    The observed constant is the smallest eigenvalue of ``V^T M 1_S V`` for an
    m-orthonormal basis V of the range of P.
    """
    S_mask = np.asarray(S_mask, dtype=bool)
    lo, hi = _interval(I)
    if dec is None:
        dec = eigenpairs_covering(op, hi)
    V = _select(dec, (lo, hi))
    report = {"claimed_kappa": float(kappa), "rank": int(V.shape[1]), "interval": [lo, hi]}
    if V.shape[1] == 0:
        report.update(observed_kappa=None, slack=None, passed=True, status="vacuous (no spectrum in I)")
        return report
    C = V.T @ (V * (op.measure * S_mask)[:, None])
    observed = float(np.linalg.eigvalsh(0.5 * (C + C.T))[0])
    report.update(
        observed_kappa=observed,
        slack=(observed / kappa) if kappa > 0 else math.inf,
        passed=bool(observed >= kappa - 1e-10),
        status="checked",
    )
    return report


def embedding_indices(op_full: DiscreteOperator, op_dir: DiscreteOperator) -> np.ndarray:
    """Positions of ``op_dir``'s vertices inside ``op_full``."""
    pos = {int(v): i for i, v in enumerate(op_full.vertex_ids)}
    try:
        return np.array([pos[int(v)] for v in op_dir.vertex_ids], dtype=np.int64)
    except KeyError as exc:
        raise DomainError("restricted operator has a vertex missing from the full one") from exc


def _power_norm(D: np.ndarray, rtol: float, max_iter: int):
    x = np.ones(D.shape[0]) + np.linspace(0.0, 1.0, D.shape[0])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = D @ (D @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, True
        new = math.sqrt(ny)
        x = y / ny
        if abs(new - est) <= rtol * new:
            return new, True
        est = new
    return est, False


def semigroup_difference_norm(op_full: DiscreteOperator, op_dir: DiscreteOperator, t: float,
                              embed=None, rtol: float = 1e-8, max_iter: int = 2000) -> float:
    """``|| e^{-t A_full} - i e^{-t A_dir} i^T ||`` in ``L^2(m)``, i the zero extension."""
    N = op_full.size
    if N > EXPM_MAX:
        raise DomainError(f"dense matrix exponential capped at {EXPM_MAX} vertices, got {N}")
    if t < 0:
        raise DomainError("time must be nonnegative")
    emb = embedding_indices(op_full, op_dir) if embed is None else np.asarray(embed, dtype=np.int64)
    if not np.allclose(op_full.measure[emb], op_dir.measure):
        raise DomainError("embedded vertices carry different weights")
    D = sla.expm(-t * op_full.symmetric_matrix().toarray())
    D[np.ix_(emb, emb)] -= sla.expm(-t * op_dir.symmetric_matrix().toarray())
    D = 0.5 * (D + D.T)
    val, ok = _power_norm(D, rtol, max_iter)
    if not ok:
        val = float(np.max(np.abs(np.linalg.eigvalsh(D))))
    return float(val)


def semigroup_norm(op: DiscreteOperator, t: float) -> float:
    """``|| e^{-t A} || = e^{-t lambda_min}``."""
    return math.exp(-t * lowest_eigenpairs(op, 1).eigenvalues[0])


def rayleigh_quotient(op: DiscreteOperator, f) -> float:
    """``f^T K f / f^T M f``."""
    f = np.asarray(f, dtype=float)
    den = float(np.sum(op.measure * f * f))
    if den == 0.0:
        raise DomainError("test function vanishes identically")
    return float(f @ (op.stiffness @ f)) / den


def bottom(op: DiscreteOperator) -> float:
    """Smallest eigenvalue."""
    return float(lowest_eigenpairs(op, 1).eigenvalues[0])


def ordering_chain(op: DiscreteOperator, S_mask, S_rho_mask, t: float) -> dict:
    """``lambda_t <= mu_t <= lambda_{M, S_rho}`` from one grid instance.

    ``lambda_t``: bottom of ``A + t 1_{S_rho}``; ``mu_t``: bottom of the
    Dirichlet restriction off S plus ``t 1_{S_rho \\ S}``; the last value is the
    Dirichlet bottom off ``S_rho``.
    """
    S = np.asarray(S_mask, dtype=bool)
    Sr = np.asarray(S_rho_mask, dtype=bool)
    if np.any(S & ~Sr):
        raise PreconditionError("S must be contained in S_rho")
    lam_t = bottom(add_potential(op, t * Sr))
    mu_t = bottom(add_potential(dirichlet_restrict(op, S), t * Sr[~S]))
    lam_dir = bottom(dirichlet_restrict(op, Sr))
    return {"t": t, "lambda_t": lam_t, "mu_t": mu_t, "lambda_M_Srho": lam_dir}
