"""Shared instance generators for the tests."""

import math

import numpy as np

from ricci_ucp import skeleton

# (d, N_side) of the randomized relatively dense masks; all but the last few have <= 200 points
DENSE_MASK_GRIDS = [(1, 60), (1, 100), (1, 150), (1, 200), (1, 128), (1, 90), (1, 180),
                    (2, 10), (2, 12), (2, 14), (2, 9), (2, 13), (2, 20), (2, 24),
                    (3, 5), (3, 5), (3, 4), (3, 10), (3, 12), (3, 8)]


def random_dense_mask(seed: int, d: int, N_side: int, side: float = 2 * math.pi):
    """Random union of grid balls, with R chosen so the mask is (R, rho)-relatively dense.

    Returns ``(space, S, R, rho)``.
    """
    rng = np.random.default_rng(seed)
    space = skeleton.MetricPointSet.torus_grid(d, N_side, side)
    h = space.spacing
    k = int(rng.integers(2, max(3, space.size // 12) + 1))
    radius = h * rng.uniform(1.2, 3.0)
    centers = rng.choice(space.size, size=min(k, space.size), replace=False)
    S = skeleton.ball_union(centers, radius, space)
    if S.all():
        S[int(rng.integers(space.size))] = False
    rho = h * rng.uniform(0.3, 1.0) * (radius / h - 0.5)
    core = skeleton.deep_core(S, rho, space)
    if not core.any():
        rho = 0.5 * h
        core = skeleton.deep_core(S, rho, space)
    reach = float(space.dist_to_set(core).max())
    R = reach + rho + h * rng.uniform(0.0, 1.0)
    return space, S, R, rho
