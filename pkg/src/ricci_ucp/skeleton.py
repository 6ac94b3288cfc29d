"""Finite metric point sets, skeletons of relatively dense sets, Voronoi cells.

Ball inclusions on grids carry a one-cell tolerance ``slack`` (default: the
grid spacing of the point set, 0 for point sets without one).
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, PreconditionError, VerificationError

_CHUNK = 1 << 22  # distance entries per block
_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MetricPointSet:
    """Points with either Euclidean (optionally periodic) coordinates or a distance matrix.

    Parameters
    ----------
    coords : (N, d) array, optional
    periods : sequence of side lengths
        Makes the metric the flat torus metric when given.
    matrix : (N, N) array, optional
        Explicit symmetric distance matrix, used instead of ``coords``.
    grid_shape : tuple, optional
        Set for regular grids in C order; enables neighbour queries.
    spacing : float
        Grid spacing, the default inclusion slack.
    """

    coords: Optional[np.ndarray] = None
    periods: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    grid_shape: Optional[tuple] = None
    spacing: float = 0.0
    diameter: Optional[float] = None
    periodic_grid: bool = False

    def __post_init__(self):
        if (self.coords is None) == (self.matrix is None):
            raise DomainError("give exactly one of coords or matrix")
        if self.matrix is not None:
            m = self.matrix
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise DomainError("distance matrix must be square")
            if np.any(np.diag(m) != 0) or not np.array_equal(m, m.T) or np.any(m < 0):
                raise DomainError("distance matrix must be symmetric, nonnegative, zero on the diagonal")

    @property
    def size(self) -> int:
        return len(self.coords) if self.matrix is None else self.matrix.shape[0]

    @property
    def metric_tag(self) -> str:
        if self.matrix is not None:
            return "matrix"
        if self.periods is None:
            return "euclidean"
        return "euclidean-torus [" + ", ".join(repr(float(L)) for L in self.periods) + "]"

    @classmethod
    def torus_grid(cls, d: int, N_side: int, side: float) -> "MetricPointSet":
        """Vertices of the periodic grid used by the lattice torus operators."""
        h = side / N_side
        axes = [np.arange(N_side) * h] * d
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        return cls(coords=pts, periods=np.full(d, float(side)), grid_shape=(N_side,) * d, spacing=h,
                   diameter=side * math.sqrt(d) / 2.0, periodic_grid=True)

    @classmethod
    def line_grid(cls, N: int, h: float, start: float = 0.0) -> "MetricPointSet":
        pts = (start + h * np.arange(N))[:, None]
        return cls(coords=pts, grid_shape=(N,), spacing=h, diameter=h * (N - 1))

    @classmethod
    def from_matrix(cls, matrix) -> "MetricPointSet":
        m = np.asarray(matrix, dtype=float)
        return cls(matrix=m, diameter=float(m.max()))

    # distances

    def _pair(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        diff = a[:, None, :] - b[None, :, :]
        if self.periods is not None:
            diff -= self.periods * np.round(diff / self.periods)
        return np.sqrt(np.sum(diff * diff, axis=-1))

    def dist(self, i: int, j: int) -> float:
        if self.matrix is not None:
            return float(self.matrix[i, j])
        return float(self._pair(self.coords[[i]], self.coords[[j]])[0, 0])

    def dist_block(self, rows, cols=None) -> np.ndarray:
        """Distances between index sets ``rows`` x ``cols`` (all points by default)."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.arange(self.size) if cols is None else np.asarray(cols, dtype=np.int64)
        if self.matrix is not None:
            return self.matrix[np.ix_(rows, cols)]
        return self._pair(self.coords[rows], self.coords[cols])

    def dist_to_set(self, mask, targets=None) -> np.ndarray:
        """``min_{y in mask} d(x, y)`` for every x (or for ``targets``); inf for an empty set."""
        mask = np.asarray(mask, dtype=bool)
        targets = np.arange(self.size) if targets is None else np.asarray(targets, dtype=np.int64)
        out = np.full(len(targets), math.inf)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return out
        step = max(1, _CHUNK // idx.size)
        for s in range(0, len(targets), step):
            out[s:s + step] = self.dist_block(targets[s:s + step], idx).min(axis=1)
        return out

    def nearest(self, centers) -> tuple:
        """Index into ``centers`` of the nearest one (first on ties), and that distance."""
        centers = np.asarray(centers, dtype=np.int64)
        arg = np.empty(self.size, dtype=np.int64)
        dmin = np.empty(self.size)
        step = max(1, _CHUNK // max(1, centers.size))
        for s in range(0, self.size, step):
            blk = self.dist_block(np.arange(s, min(s + step, self.size)), centers)
            dmin[s:s + step] = blk.min(axis=1)
            # ties within rounding go to the first column
            arg[s:s + step] = np.argmax(blk <= dmin[s:s + step, None] + _TOL * (1.0 + dmin[s:s + step, None]), axis=1)
        return arg, dmin

    def neighbors(self, i: int) -> np.ndarray:
        """Axis neighbours on a grid point set."""
        if self.grid_shape is None:
            raise DomainError("neighbour queries need a grid point set")
        multi = np.array(np.unravel_index(i, self.grid_shape))
        out = []
        for ax, n in enumerate(self.grid_shape):
            for step in (-1, 1):
                m = multi.copy()
                m[ax] += step
                if self.periodic_grid:
                    m[ax] %= n
                elif not 0 <= m[ax] < n:
                    continue
                out.append(np.ravel_multi_index(tuple(m), self.grid_shape))
        return np.unique(np.array(out, dtype=np.int64))

    def spot_check_metric(self, samples: int = 2000, seed: int = 0) -> bool:
        """Triangle inequality on random triples."""
        rng = np.random.default_rng(seed)
        ijk = rng.integers(0, self.size, size=(samples, 3))
        for i, j, k in ijk:
            if self.dist(i, k) > self.dist(i, j) + self.dist(j, k) + _TOL:
                return False
        return True

    # serialization

    def to_dict(self) -> dict:
        if self.matrix is not None:
            return {"metric": "matrix", "matrix": self.matrix.tolist()}
        return {
            "metric": self.metric_tag,
            "points": [{"index": i, "coords": c.tolist()} for i, c in enumerate(self.coords)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricPointSet":
        if data.get("metric") == "matrix":
            return cls.from_matrix(data["matrix"])
        pts = sorted(data["points"], key=lambda p: p["index"])
        if [p["index"] for p in pts] != list(range(len(pts))):
            raise DomainError("point indices must be 0..N-1")
        coords = np.array([p["coords"] for p in pts], dtype=float)
        return cls(coords=coords, periods=_parse_metric(data.get("metric", "euclidean")))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MetricPointSet":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_csv(cls, text: str, metric: str = "euclidean") -> "MetricPointSet":
        """Rows ``index, x_1, ..., x_d``; a header row is skipped if present."""
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        rows.sort(key=lambda r: int(r[0]))
        coords = np.array([[float(v) for v in r[1:]] for r in rows])
        return cls(coords=coords, periods=_parse_metric(metric))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index"] + [f"x{k}" for k in range(self.coords.shape[1])])
        for i, c in enumerate(self.coords):
            w.writerow([i] + [repr(float(v)) for v in c])
        return buf.getvalue()


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _parse_metric(tag: str):
    tag = tag.strip()
    if tag == "euclidean":
        return None
    m = re.fullmatch(r"euclidean-torus\s*\[(.*)\]", tag)
    if not m:
        raise DomainError(f"unknown metric tag {tag!r}")
    return np.array([float(v) for v in m.group(1).replace(",", " ").split()])


@dataclass
class Verdict:
    passed: bool
    witness: Optional[int] = None
    detail: dict = field(default_factory=dict)


@dataclass
class Skeleton:
    """Centers (point indices, ascending), radii and the checks done on construction."""

    centers: np.ndarray
    R: float
    rho: float
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "R": self.R, "rho": self.rho, "checks": self.checks}


def _slack(space: MetricPointSet, slack) -> float:
    return space.spacing if slack is None else float(slack)


def depth(S_mask, space: MetricPointSet) -> np.ndarray:
    """Distance to the complement for points of S, 0 outside S."""
    S = np.asarray(S_mask, dtype=bool)
    out = np.zeros(space.size)
    out[S] = space.dist_to_set(~S, np.flatnonzero(S))
    return out


def deep_core(S_mask, rho: float, space: MetricPointSet) -> np.ndarray:
    """Mask of ``y in S`` whose closed ball of radius ``rho`` lies in S."""
    S = np.asarray(S_mask, dtype=bool)
    if S.shape != (space.size,):
        raise DomainError("mask length must equal the number of points")
    return S & (depth(S, space) > rho * (1.0 + _TOL) + _TOL)


def verify_relative_density(S_mask, R: float, rho: float, space: MetricPointSet, slack=None) -> Verdict:
    """Every x has a core point y with ``d(x, y) <= R - rho + slack``.

    The first failing x (lowest index) is returned as ``witness``.
    """
    core = deep_core(S_mask, rho, space)
    reach = space.dist_to_set(core)
    limit = R - rho + _slack(space, slack) + _TOL
    bad = np.flatnonzero(reach > limit)
    detail = {"max_distance_to_core": float(reach.max()), "limit": float(limit), "core_size": int(core.sum())}
    if bad.size:
        return Verdict(False, int(bad[0]), detail)
    return Verdict(True, None, detail)


def ball_union(centers, r: float, space: MetricPointSet) -> np.ndarray:
    """Mask of points within closed distance ``r`` of the centers."""
    m = np.zeros(space.size, dtype=bool)
    m[np.asarray(centers, dtype=np.int64)] = True
    return space.dist_to_set(m) <= r * (1.0 + _TOL) + _TOL


def tubular_neighbourhood(S_mask, rho: float, space: MetricPointSet) -> np.ndarray:
    """Open tube ``{x : d(x, S) < rho}``."""
    return space.dist_to_set(S_mask) < rho * (1.0 - _TOL)


def build_skeleton(S_mask, R: float, rho: float, space: MetricPointSet, slack=None,
                   check_removal: bool = True) -> Skeleton:
    """Greedy R-separated subset of the deep core of S.

    Candidates are visited by decreasing depth, ties by index, so on symmetric
    sets the centers land at the deepest points.

    Raises
    ------
    PreconditionError
        S is not (R, rho)-relatively dense on the sampled space.
    VerificationError
        Covering or separation fails; ``witness`` is the offending point.
    """
    if not 0 < rho < R:
        raise PreconditionError(f"need 0 < rho < R, got rho={rho}, R={R}")
    S = np.asarray(S_mask, dtype=bool)
    sl = _slack(space, slack)
    dens = verify_relative_density(S, R, rho, space, sl)
    if not dens.passed:
        raise PreconditionError(f"S is not ({R}, {rho})-relatively dense: point {dens.witness} has no deep point nearby")
    dep = depth(S, space)
    core = np.flatnonzero(deep_core(S, rho, space))
    # quantize so rounding noise in the metric cannot reorder equal depths
    key = np.round(dep[core] / max(float(dep[core].max(initial=0.0)), 1e-300), 9)
    order = core[np.lexsort((core, -key))]
    # running minimum distance to the admitted centers
    gap = np.full(space.size, math.inf)
    chosen = []
    for y in order:
        if gap[y] >= R * (1.0 - _TOL):
            chosen.append(int(y))
            gap = np.minimum(gap, space.dist_block([y])[0])
    centers = np.array(sorted(chosen), dtype=np.int64)
    checks = skeleton_checks(centers, S, R, rho, space, sl, check_removal)
    if not checks["covering"]["passed"]:
        raise VerificationError("3R-balls around the skeleton do not cover the space", checks["covering"]["witness"])
    if not checks["separation"]["passed"]:
        raise VerificationError("skeleton separation outside [R, 6R]", checks["separation"]["witness"])
    return Skeleton(centers=centers, R=R, rho=rho, checks=checks)


def skeleton_checks(centers, S_mask, R, rho, space: MetricPointSet, slack, check_removal=True) -> dict:
    """Properties (a), (b), (c) of a skeleton, each with a witness on failure."""
    centers = np.asarray(centers, dtype=np.int64)
    S = np.asarray(S_mask, dtype=bool)
    out = {}
    balls = ball_union(centers, rho, space)
    inside = bool(np.all(S[balls]))
    dens = verify_relative_density(balls, 3 * R, rho, space, slack)
    out["balls_in_S"] = inside
    out["dense_3R"] = {"passed": dens.passed, "witness": dens.witness}
    reach = space.dist_to_set(np.isin(np.arange(space.size), centers))
    far = np.flatnonzero(reach > 3 * R + slack + _TOL)
    out["covering"] = {"passed": far.size == 0, "witness": int(far[0]) if far.size else None,
                       "radius": float(reach.max())}
    sep = {"passed": True, "witness": None, "min": None, "max_nearest": None}
    if centers.size >= 2:
        D = space.dist_block(centers, centers)
        np.fill_diagonal(D, math.inf)
        nn = D.min(axis=1)
        sep["min"], sep["max_nearest"] = float(nn.min()), float(nn.max())
        bad = np.flatnonzero((nn < R * (1 - _TOL)) | (nn > 6 * R + slack + _TOL))
        if bad.size:
            sep.update(passed=False, witness=int(centers[bad[0]]))
    out["separation"] = sep
    if check_removal and centers.size >= 2:
        ok, wit = True, None
        for p in centers:
            rest = centers[centers != p]
            v = verify_relative_density(ball_union(rest, rho, space), 6 * R, rho, space, slack)
            if not v.passed:
                ok, wit = False, int(p)
                break
        out["dense_6R_after_removal"] = {"passed": ok, "witness": wit}
    out["single_center_compact"] = bool(centers.size == 1 and space.diameter is not None
                                        and math.isfinite(space.diameter))
    out["proper"] = None if space.diameter is None else bool(space.diameter > 3 * R)
    return out


@dataclass
class VoronoiPartition:
    assignment: np.ndarray  # point -> center point index
    centers: np.ndarray
    checks: dict

    def cell(self, p: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == p)

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "assignment": self.assignment.tolist(), "checks": self.checks}


def voronoi_partition(sk: Skeleton, space: MetricPointSet, slack=None, star_check: bool = True) -> VoronoiPartition:
    """Nearest-center assignment, ties to the lowest center index."""
    centers = np.sort(np.asarray(sk.centers, dtype=np.int64))
    arg, dmin = space.nearest(centers)
    assign = centers[arg]
    sl = _slack(space, slack)
    checks = {}
    # B_{rho/2}(p) in G_p in B_{3R}(p)
    inner_ok, outer_ok = True, True
    for p in centers:
        cell = assign == p
        dp = space.dist_block([p])[0]
        if np.any(~cell & (dp < sk.rho / 2)):
            inner_ok = False
        if np.any(cell & (dp > 3 * sk.R + sl + _TOL)):
            outer_ok = False
    checks["inner_ball"] = inner_ok
    checks["outer_ball"] = outer_ok
    if star_check and space.grid_shape is not None:
        checks["star_shaped"] = _star_shaped(assign, dmin, space, sl)
    return VoronoiPartition(assignment=assign, centers=centers, checks=checks)


def _star_shaped(assign, dmin, space: MetricPointSet, slack: float) -> bool:
    """Each non-center point x of G_p has a neighbour strictly closer to p lying in G_p up to ``slack``.

    A neighbour y outside G_p still counts when ``d(y, p) <= d(y, Sigma) + slack``.
    """
    for x in range(space.size):
        if dmin[x] <= _TOL:
            continue
        p = assign[x]
        nb = space.neighbors(x)
        dp = space.dist_block(nb, [p])[:, 0]
        ok = (dp < dmin[x] - _TOL) & ((assign[nb] == p) | (dp <= dmin[nb] + slack + _TOL))
        if not ok.any():
            return False
    return True
