"""Monte Carlo for exit times, hit-and-run events and Feynman-Kac averages.

Every walk has generator equal to the Laplacian it is paired with (``dX = sqrt(2) dB``
in the continuum, the lattice operator ``A`` on grids), never ``A/2``.

Randomness: ``SeedSequence(seed).spawn`` gives one Philox stream per fixed-size
chunk of paths, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special, stats

from .constants import ExitTimePreconditionError, ProblemParams, exit_time_bound
from .errors import DomainError, PreconditionError

SCHEMES = ("euler-maruyama", "grid-jump")
THREADS_ENV = "RICCI_UCP_THREADS"


@dataclass(frozen=True)
class WalkConfig:
    """Simulation settings.

    ``geometry`` is one of

    * ``{"kind": "torus", "sides": [L1, ...]}``: flat torus, ``inf`` sides give R^d
    * ``{"kind": "radial", "K": K, "n": n}``: radial part of the model space
    * ``{"kind": "lattice", "d": d, "N_side": N, "side": L}``: periodic grid walk
    """

    geometry: dict
    dt: float
    num_paths: int
    seed: int
    scheme: str = "euler-maruyama"
    chunk: int = 10_000
    threads: Optional[int] = None
    bridge: bool = True  # Brownian-bridge crossing correction between steps

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.num_paths < 1 or self.chunk < 1:
            raise DomainError("need at least one path per run and per chunk")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}")
        kind = self.geometry.get("kind")
        if kind not in ("torus", "radial", "lattice"):
            raise DomainError(f"unknown geometry kind {kind!r}")
        if (kind == "lattice") != (self.scheme == "grid-jump"):
            raise DomainError("grid-jump goes with lattice geometry, euler-maruyama with torus/radial")

    def with_dt(self, dt: float) -> "WalkConfig":
        return replace(self, dt=dt)

    def to_dict(self) -> dict:
        return {"geometry": self.geometry, "dt": self.dt, "num_paths": self.num_paths, "seed": self.seed,
                "scheme": self.scheme, "chunk": self.chunk, "bridge": self.bridge}


@dataclass
class ExitTimeEstimate:
    """Binomial estimate with a 95% Wilson interval."""

    p_hat: float
    ci_halfwidth: float
    num_paths: int
    seed: int
    horizon: float
    radius: float
    successes: int = 0
    ci_low: float = 0.0
    ci_high: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(p_hat=self.p_hat, ci_halfwidth=self.ci_halfwidth, ci_low=self.ci_low, ci_high=self.ci_high,
                    successes=self.successes, num_paths=self.num_paths, seed=self.seed, horizon=self.horizon,
                    radius=self.radius, diagnostics=self.diagnostics)


@dataclass
class MeanEstimate:
    value: float
    stderr: float
    num_paths: int
    seed: int

    @property
    def ci_halfwidth(self) -> float:
        return 1.96 * self.stderr


def wilson(successes: int, n: int, seed: int, horizon: float, radius: float, diagnostics=None) -> ExitTimeEstimate:
    ci = stats.binomtest(int(successes), int(n)).proportion_ci(confidence_level=0.95, method="wilson")
    return ExitTimeEstimate(
        p_hat=successes / n, ci_halfwidth=0.5 * (ci.high - ci.low), num_paths=n, seed=seed, horizon=horizon,
        radius=radius, successes=int(successes), ci_low=float(ci.low), ci_high=float(ci.high),
        diagnostics=diagnostics or {},
    )


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    return max(1, int(threads))


def run_chunks(cfg: WalkConfig, fn: Callable[[np.random.Generator, int], object]) -> list:
    """Apply ``fn(rng, m)`` to each chunk; results come back in chunk order."""
    sizes = [cfg.chunk] * (cfg.num_paths // cfg.chunk)
    if cfg.num_paths % cfg.chunk:
        sizes.append(cfg.num_paths % cfg.chunk)
    seqs = np.random.SeedSequence(cfg.seed).spawn(len(sizes))

    def job(i):
        return fn(np.random.Generator(np.random.Philox(seqs[i])), sizes[i])

    nthreads = resolve_threads(cfg.threads)
    if nthreads == 1 or len(sizes) == 1:
        return [job(i) for i in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        return list(pool.map(job, range(len(sizes))))


def _steps(cfg: WalkConfig, horizon: float, factor: float = 100.0):
    if cfg.dt > horizon / factor * (1 + 1e-12):
        raise PreconditionError(f"dt={cfg.dt} exceeds horizon/{factor:g} = {horizon / factor}")
    n = max(1, int(round(horizon / cfg.dt)))
    return n, horizon / n


def _sides(cfg: WalkConfig) -> np.ndarray:
    return np.asarray(cfg.geometry["sides"], dtype=float)


def _wrap(y: np.ndarray, sides: np.ndarray) -> np.ndarray:
    finite = np.isfinite(sides)
    if not finite.any():
        return y
    out = y.copy()
    out[..., finite] = np.mod(y[..., finite], sides[finite])
    return out


def _torus_delta(y: np.ndarray, c: np.ndarray, sides: np.ndarray) -> np.ndarray:
    diff = y - c
    finite = np.isfinite(sides)
    if finite.any():
        diff[..., finite] -= sides[finite] * np.round(diff[..., finite] / sides[finite])
    return diff


def _cross(rng, g0, g1, dt):
    """Bridge crossing draw for a barrier at signed gaps g0, g1 > 0 (sigma^2 = 2)."""
    p = np.exp(-np.clip(g0 * g1, 0.0, None) / dt)
    return rng.random(g0.shape) < p


# lattice kernel -----------------------------------------------------------

def lattice_jump_table(s: float, tail: float = 1e-17):
    """Offsets ``j`` and probabilities ``e^{-2s} I_j(2s)`` of the Z-walk with unit rates.

    This is the row of ``exp(-t L)`` on Z, ``L`` the path Laplacian and ``s = t/h^2``.
    """
    J = 1
    while special.ive(J, 2.0 * s) > tail:
        J += 1
    j = np.arange(-J, J + 1)
    p = special.ive(np.abs(j), 2.0 * s)
    return j, p / p.sum()


def _jump_sampler(s: float):
    j, p = lattice_jump_table(s)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0

    def draw(rng, shape):
        return j[np.searchsorted(cdf, rng.random(shape), side="right")]

    return draw


def _lattice_h(cfg):
    g = cfg.geometry
    return g["side"] / g["N_side"], int(g["d"]), int(g["N_side"])


def _flat_index(multi: np.ndarray, N: int) -> np.ndarray:
    idx = np.zeros(multi.shape[0], dtype=np.int64)
    for ax in range(multi.shape[1]):
        idx = idx * N + np.mod(multi[:, ax], N)
    return idx


def _start_multi(x, d: int, N: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x))
    if x.size == 1 and d > 1:
        return np.array(np.unravel_index(int(x[0]), (N,) * d))
    return x.astype(np.int64).reshape(d)


# exit probabilities --------------------------------------------------------

def _radial_correction(K: float, n: int, r: np.ndarray) -> np.ndarray:
    """``(n-1)(sn'/sn - 1/r)``, the smooth part of the radial drift."""
    x = K * r * r
    small = np.abs(x) < 1e-6
    rs = np.where(small, 1.0, r)
    if K > 0:
        s = math.sqrt(K)
        full = s / np.tan(s * rs) - 1.0 / rs
    elif K < 0:
        s = math.sqrt(-K)
        full = s / np.tanh(s * rs) - 1.0 / rs
    else:
        full = np.zeros_like(rs)
    out = np.where(small, -K * r / 3.0 * (1.0 + x / 15.0), full)
    return (n - 1) * out


def simulate_exit_prob(cfg: WalkConfig, x, rho: float, alpha: float) -> ExitTimeEstimate:
    """Estimate ``P_x(tau_rho <= alpha)``.

    ``x`` is a point of the torus, a start radius for radial geometry, or a
    vertex (flat index or multi-index) for lattice geometry.
    """
    if rho <= 0 or alpha <= 0:
        raise DomainError("rho and alpha must be positive")
    n, dt = _steps(cfg, alpha)
    kind = cfg.geometry["kind"]
    diag = {}
    if kind == "torus":
        sides = _sides(cfg)
        if np.any(rho > sides / 2):
            diag["note"] = "rho exceeds half a side; displacement is measured unwrapped"

        def fn(rng, m):
            disp = np.zeros((m, len(sides)))
            r0 = np.zeros(m)
            out = np.zeros(m, dtype=bool)
            sd = math.sqrt(2.0 * dt)
            for _ in range(n):
                disp += sd * rng.standard_normal(disp.shape)
                r1 = np.sqrt(np.sum(disp * disp, axis=1))
                out |= r1 >= rho
                if cfg.bridge:
                    out |= _cross(rng, rho - r0, rho - r1, dt) & (r1 < rho) & (r0 < rho)
                r0 = r1
            return int(out.sum()), 0

    elif kind == "radial":
        # Bessel part exactly through n-dimensional Gaussian steps, the curvature
        # correction as a radial drift; reflection below the conjugate radius
        K, dim = float(cfg.geometry["K"]), int(cfg.geometry["n"])
        top = math.pi / math.sqrt(K) if K > 0 else math.inf
        start = float(np.asarray(x).ravel()[0])
        if not 0 <= start < rho:
            raise DomainError("start radius must lie in [0, rho)")
        guard = 1e-3 * top if math.isfinite(top) else math.inf

        def fn(rng, m):
            y = np.zeros((m, dim))
            y[:, 0] = start
            r = np.full(m, start)
            out = np.zeros(m, dtype=bool)
            reflections = 0
            sd = math.sqrt(2.0 * dt)
            for _ in range(n):
                if K != 0:
                    rs = np.maximum(r, 1e-300)
                    y += (_radial_correction(K, dim, rs) * dt / rs)[:, None] * y
                y += sd * rng.standard_normal(y.shape)
                r_new = np.sqrt(np.sum(y * y, axis=1))
                if math.isfinite(top):
                    high = r_new > top - guard
                    if high.any():
                        reflections += int(high.sum())
                        target = 2 * (top - guard) - r_new[high]
                        y[high] *= (target / r_new[high])[:, None]
                        r_new[high] = target
                out |= r_new >= rho
                if cfg.bridge:
                    out |= _cross(rng, rho - r, rho - r_new, dt) & (r_new < rho) & (r < rho)
                r = r_new
            return int(out.sum()), reflections

    else:
        h, d, N = _lattice_h(cfg)
        draw = _jump_sampler(dt / h ** 2)
        lim = (rho / h) ** 2

        def fn(rng, m):
            disp = np.zeros((m, d), dtype=np.int64)
            out = np.zeros(m, dtype=bool)
            for _ in range(n):
                disp += draw(rng, disp.shape)
                out |= np.sum(disp * disp, axis=1) >= lim * (1 - 1e-12)
            return int(out.sum()), 0

    parts = run_chunks(cfg, fn)
    k = sum(p[0] for p in parts)
    refl = sum(p[1] for p in parts)
    if kind == "radial":
        diag["reflections"] = refl
    diag["steps"] = n
    return wilson(k, cfg.num_paths, cfg.seed, alpha, rho, diag)


# hit-and-run ----------------------------------------------------------------

@dataclass(frozen=True)
class BallUnion:
    """Open set ``S`` as a union of balls on a (possibly periodic) flat space."""

    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        r = np.broadcast_to(np.asarray(self.radii, dtype=float), (c.shape[0],)).copy()
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)

    @classmethod
    def empty(cls, d: int) -> "BallUnion":
        return cls(np.zeros((0, d)), np.zeros(0))

    def gap(self, y: np.ndarray, sides: np.ndarray) -> np.ndarray:
        """``min_i |y - c_i| - r_i``: negative inside S, distance to S outside."""
        if self.centers.shape[0] == 0:
            return np.full(y.shape[0], math.inf)
        g = np.full(y.shape[0], math.inf)
        for c, r in zip(self.centers, self.radii):
            dlt = _torus_delta(y, c, sides)
            g = np.minimum(g, np.sqrt(np.sum(dlt * dlt, axis=1)) - r)
        return g


@dataclass
class WholeSpace:
    """``S = M``."""

    def gap(self, y, sides):
        return np.full(y.shape[0], -math.inf)


def hit_and_run_pair(cfg: WalkConfig, S, rho: float, alpha0: float, alpha: float, x) -> dict:
    """Both sides of the hit-and-run inequality.

    ``lhs`` estimates ``P_x(sigma_S <= alpha0, T <= alpha)``, ``T`` the time in
    the tube ``S_rho`` up to ``alpha0``. ``rhs`` estimates ``P_z(tau_{rho/2} <= alpha)``
    at one base point, which is the supremum on the homogeneous geometries
    supported here. ``S`` is a :class:`BallUnion` / :class:`WholeSpace` for
    torus geometry and a vertex mask for lattice geometry.
    """
    if not 0 < alpha < alpha0:
        raise PreconditionError(f"need 0 < alpha < alpha0, got alpha={alpha}, alpha0={alpha0}")
    if rho <= 0:
        raise PreconditionError("rho must be positive")
    kind = cfg.geometry["kind"]
    if kind == "radial":
        raise DomainError("hit-and-run is implemented for torus and lattice geometries")
    _steps(cfg, alpha)
    n, dt = _steps(cfg, alpha0)

    if kind == "torus":
        sides = _sides(cfg)
        x0 = np.asarray(x, dtype=float).reshape(len(sides))

        def fn(rng, m):
            y = np.tile(x0, (m, 1))
            g0 = S.gap(y, sides)
            hit = g0 < 0
            occ = np.zeros(m)
            sd = math.sqrt(2.0 * dt)
            for _ in range(n):
                occ += dt * (g0 < rho)  # left-point rule on [0, alpha0)
                y = _wrap(y + sd * rng.standard_normal(y.shape), sides)
                g1 = S.gap(y, sides)
                hit |= g1 < 0
                if cfg.bridge:
                    hit |= _cross(rng, g0, g1, dt) & (g0 > 0) & (g1 > 0)
                g0 = g1
            return int(np.sum(hit & (occ <= alpha)))

    else:
        from .skeleton import MetricPointSet, tubular_neighbourhood

        h, d, N = _lattice_h(cfg)
        g = cfg.geometry
        space = MetricPointSet.torus_grid(d, N, g["side"])
        S_mask = np.asarray(S, dtype=bool)
        tube = tubular_neighbourhood(S_mask, rho, space) | S_mask
        draw = _jump_sampler(dt / h ** 2)
        start = _start_multi(x, d, N)

        def fn(rng, m):
            pos = np.tile(start, (m, 1))
            idx = _flat_index(pos, N)
            hit = S_mask[idx].copy()
            occ = np.zeros(m)
            for _ in range(n):
                occ += dt * tube[idx]
                pos += draw(rng, pos.shape)
                idx = _flat_index(pos, N)
                hit |= S_mask[idx]
            return int(np.sum(hit & (occ <= alpha)))

    k = sum(run_chunks(cfg, fn))
    lhs = wilson(k, cfg.num_paths, cfg.seed, alpha0, rho, {"steps": n})
    x_rhs = 0 if kind == "lattice" else np.zeros(len(_sides(cfg)))
    rhs_cfg = replace(cfg, seed=cfg.seed + 1)
    rhs = simulate_exit_prob(rhs_cfg, x_rhs, rho / 2.0, alpha)
    return {"lhs": lhs, "rhs": rhs,
            "passed": bool(lhs.p_hat <= rhs.p_hat + 3.0 * (lhs.ci_halfwidth + rhs.ci_halfwidth))}


# Feynman-Kac ----------------------------------------------------------------

def feynman_kac(cfg: WalkConfig, V, f, t: float, x) -> MeanEstimate:
    """Monte Carlo ``E_x[f(X_t) exp(-int_0^t V(X_s) ds)]`` for the lattice walk.

    The time integral uses the trapezoid rule on the sampling grid.
    """
    if cfg.scheme != "grid-jump":
        raise DomainError("Feynman-Kac averages need the grid-jump scheme")
    h, d, N = _lattice_h(cfg)
    V = np.asarray(V, dtype=float)
    f = np.asarray(f, dtype=float)
    if V.shape != (N ** d,) or f.shape != (N ** d,):
        raise DomainError("V and f must be vertex functions")
    n, dt = _steps(cfg, t)
    draw = _jump_sampler(dt / h ** 2)
    start = _start_multi(x, d, N)

    def fn(rng, m):
        pos = np.tile(start, (m, 1))
        idx = _flat_index(pos, N)
        integral = np.zeros(m)
        v0 = V[idx]
        for _ in range(n):
            pos += draw(rng, pos.shape)
            idx = _flat_index(pos, N)
            v1 = V[idx]
            integral += 0.5 * dt * (v0 + v1)
            v0 = v1
        vals = f[idx] * np.exp(-integral)
        return vals.sum(), (vals * vals).sum()

    parts = run_chunks(cfg, fn)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    m = cfg.num_paths
    mean = s1 / m
    var = max(s2 / m - mean * mean, 0.0) * m / max(m - 1, 1)
    return MeanEstimate(value=mean, stderr=math.sqrt(var / m), num_paths=m, seed=cfg.seed)


# Gaussian exit bound ----------------------------------------------------------

def exit_bound_check(params: ProblemParams, cfg: WalkConfig, rho: float, R: float, alpha_grid: Sequence[float],
                     x=None, fit_grid: Optional[Sequence[float]] = None, steps_per_alpha: int = 200) -> dict:
    """Compare ``P_x(tau_rho <= alpha)`` with ``min(1, bound)`` along ``alpha_grid``.

    The decay coefficient is the least-squares slope of ``log p_hat`` against
    ``-1/alpha`` over ``fit_grid`` (default: the grid points with at least ten
    exits). The walk step is ``alpha / steps_per_alpha`` at each point.
    """
    if x is None:
        x = 0.0 if cfg.geometry["kind"] == "radial" else np.zeros(len(cfg.geometry.get("sides", [0])))
    rows = []
    for alpha in alpha_grid:
        row = {"alpha": float(alpha)}
        try:
            b = exit_time_bound(params, rho, R, alpha)
        except ExitTimePreconditionError as exc:
            row.update(status="precondition failed", error=str(exc), passed=None)
            rows.append(row)
            continue
        est = simulate_exit_prob(cfg.with_dt(alpha / steps_per_alpha), x, rho, alpha)
        cap = min(1.0, b.value)
        row.update(p_hat=est.p_hat, ci=est.ci_halfwidth, bound=b.value, log_bound=b.log_raw, capped_bound=cap,
                   vacuous=b.vacuous, passed=bool(est.p_hat - 3 * est.ci_halfwidth <= cap),
                   status="vacuous" if b.vacuous else "checked")
        rows.append(row)
    fit_pts = []
    if fit_grid is None:
        fit_pts = [(r["alpha"], r["p_hat"]) for r in rows if r.get("p_hat") and r["p_hat"] * cfg.num_paths >= 10]
    else:
        for alpha in fit_grid:
            est = simulate_exit_prob(cfg.with_dt(alpha / steps_per_alpha), x, rho, alpha)
            if est.successes >= 10:
                fit_pts.append((float(alpha), est.p_hat))
    fit = {"points": [{"alpha": a, "p_hat": p} for a, p in fit_pts], "coefficient": None,
           "reference": rho * rho / 20.0}
    if len(fit_pts) >= 2:
        xs = np.array([-1.0 / a for a, _ in fit_pts])
        ys = np.log([p for _, p in fit_pts])
        slope, _ = np.polyfit(xs, ys, 1)
        fit["coefficient"] = float(slope)
        fit["passed"] = bool(slope >= rho * rho / 20.0)
    checked = [r for r in rows if r.get("passed") is not None]
    return {"rows": rows, "fit": fit, "passed": bool(checked) and all(r["passed"] for r in checked)}
