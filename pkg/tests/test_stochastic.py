import math
import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from ricci_ucp import lattice, skeleton, stochastic
from ricci_ucp.cli import lattice_exit_probability
from ricci_ucp.constants import ProblemParams
from ricci_ucp.errors import DomainError, PreconditionError
from ricci_ucp.stochastic import BallUnion, WalkConfig, WholeSpace

sys.path.insert(0, str(Path(__file__).parent / "oracles"))
from exit_series import ball3_exit_series, interval_exit_series  # noqa: E402

LINE = {"kind": "torus", "sides": [math.inf]}


def line_cfg(alpha, paths=20_000, seed=1, **kw):
    return WalkConfig(LINE, dt=alpha / 200, num_paths=paths, seed=seed, **kw)


def lattice_cfg(d, N, side, dt, paths, seed=3):
    return WalkConfig({"kind": "lattice", "d": d, "N_side": N, "side": side}, dt=dt, num_paths=paths, seed=seed,
                      scheme="grid-jump")


class TestConfig:
    def test_validation(self):
        with pytest.raises(DomainError):
            WalkConfig(LINE, dt=0.0, num_paths=10, seed=0)
        with pytest.raises(DomainError):
            WalkConfig({"kind": "sphere"}, dt=0.1, num_paths=10, seed=0)
        with pytest.raises(DomainError):
            WalkConfig(LINE, dt=0.1, num_paths=10, seed=0, scheme="grid-jump")
        with pytest.raises(DomainError):
            WalkConfig({"kind": "lattice", "d": 1, "N_side": 8, "side": 1.0}, dt=0.1, num_paths=10, seed=0)

    def test_dt_must_resolve_horizon(self):
        cfg = WalkConfig(LINE, dt=0.01, num_paths=10, seed=0)
        with pytest.raises(PreconditionError):
            stochastic.simulate_exit_prob(cfg, [0.0], 1.0, 0.5)

    def test_threads_from_env(self, monkeypatch):
        monkeypatch.setenv(stochastic.THREADS_ENV, "3")
        assert stochastic.resolve_threads(None) == 3
        assert stochastic.resolve_threads(2) == 2


class TestWilson:
    def test_contains_estimate(self):
        e = stochastic.wilson(37, 1000, 0, 1.0, 1.0)
        assert e.ci_low < e.p_hat < e.ci_high
        assert e.ci_halfwidth == pytest.approx(0.5 * (e.ci_high - e.ci_low))

    def test_zero_successes(self):
        e = stochastic.wilson(0, 100_000, 0, 1.0, 1.0)
        assert e.p_hat == 0 and e.ci_low == 0 and 0 < e.ci_high < 1e-4


class TestExitProbability:
    @pytest.mark.parametrize("alpha", [0.05, 0.2, 0.5])
    def test_line_against_series(self, alpha):
        est = stochastic.simulate_exit_prob(line_cfg(alpha, paths=40_000), [0.0], 1.0, alpha)
        exact = interval_exit_series(1.0, alpha)
        assert abs(est.p_hat - exact) <= 3 * est.ci_halfwidth + 1e-3

    def test_bridge_removes_monitoring_bias(self):
        alpha = 0.2
        raw = stochastic.simulate_exit_prob(line_cfg(alpha, paths=40_000, bridge=False), [0.0], 1.0, alpha)
        exact = interval_exit_series(1.0, alpha)
        assert raw.p_hat < exact - 3 * raw.ci_halfwidth  # discrete monitoring misses crossings

    def test_radial_flat_against_ball_series(self):
        cfg = WalkConfig({"kind": "radial", "K": 0.0, "n": 3}, dt=0.1 / 200, num_paths=40_000, seed=5)
        est = stochastic.simulate_exit_prob(cfg, 0.0, 1.0, 0.1)
        exact = ball3_exit_series(1.0, 0.1)
        assert abs(est.p_hat - exact) <= 3 * est.ci_halfwidth + 2e-3

    def test_torus_3d_agrees_with_radial_flat(self):
        alpha = 0.1
        cfg = WalkConfig({"kind": "torus", "sides": [2 * math.pi] * 3}, dt=alpha / 200, num_paths=40_000, seed=6)
        est = stochastic.simulate_exit_prob(cfg, np.zeros(3), 1.0, alpha)
        assert abs(est.p_hat - ball3_exit_series(1.0, alpha)) <= 3 * est.ci_halfwidth + 3e-3

    def test_curvature_ordering(self):
        # same seed: hyperbolic drift pushes outward, spherical drift pulls inward
        est = {}
        for K in (-1.0, 0.0, 1.0):
            cfg = WalkConfig({"kind": "radial", "K": K, "n": 3}, dt=0.3 / 200, num_paths=20_000, seed=8)
            est[K] = stochastic.simulate_exit_prob(cfg, 0.0, 1.5, 0.3).p_hat
        assert est[-1.0] > est[0.0] > est[1.0]

    def test_radial_start_radius_checked(self):
        cfg = WalkConfig({"kind": "radial", "K": 0.0, "n": 3}, dt=1e-3, num_paths=10, seed=0)
        with pytest.raises(DomainError):
            stochastic.simulate_exit_prob(cfg, 2.0, 1.0, 0.5)

    def test_monotone_in_horizon_common_numbers(self):
        dt = 1e-3
        cfg = WalkConfig(LINE, dt=dt, num_paths=5000, seed=11)
        ks = [stochastic.simulate_exit_prob(cfg, [0.0], 1.0, m * dt).successes for m in (100, 200, 400)]
        assert ks[0] <= ks[1] <= ks[2]

    @given(st.floats(0.3, 2.0), st.floats(1.01, 1.5))
    @settings(max_examples=10, deadline=None)
    def test_monotone_in_radius_common_numbers(self, rho, factor):
        cfg = WalkConfig(LINE, dt=1e-3, num_paths=2000, seed=12)
        small = stochastic.simulate_exit_prob(cfg, [0.0], rho, 0.2).successes
        big = stochastic.simulate_exit_prob(cfg, [0.0], rho * factor, 0.2).successes
        assert big <= small

    def test_determinism_and_thread_independence(self):
        base = dict(dt=1e-3, num_paths=25_000, seed=21, chunk=5000)
        a = stochastic.simulate_exit_prob(WalkConfig(LINE, threads=1, **base), [0.0], 0.5, 0.1)
        b = stochastic.simulate_exit_prob(WalkConfig(LINE, threads=4, **base), [0.0], 0.5, 0.1)
        c = stochastic.simulate_exit_prob(WalkConfig(LINE, threads=1, **base), [0.0], 0.5, 0.1)
        assert a.successes == b.successes == c.successes

    def test_seed_changes_sample(self):
        a = stochastic.simulate_exit_prob(WalkConfig(LINE, dt=1e-3, num_paths=5000, seed=1), [0.0], 0.5, 0.1)
        b = stochastic.simulate_exit_prob(WalkConfig(LINE, dt=1e-3, num_paths=5000, seed=2), [0.0], 0.5, 0.1)
        assert a.successes != b.successes


class TestLatticeWalk:
    @pytest.mark.parametrize("s", [0.01, 0.3, 2.0, 25.0])
    def test_jump_table_is_heat_kernel_row(self, s):
        j, p = stochastic.lattice_jump_table(s)
        N = 2 * len(j) + 20
        op = lattice.build_torus_laplacian(1, N, float(N))  # h = 1
        row = sla.expm(-s * op.symmetric_matrix().toarray())[0]
        ref = np.array([row[k % N] for k in j])
        assert p.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.max(np.abs(p - ref)) <= 1e-12

    def test_exit_against_killed_chain(self):
        d, N, side = 2, 24, 2 * math.pi
        h = side / N
        t, radius = 4 * h * h, 3 * h
        op = lattice.build_torus_laplacian(d, N, side)
        space = skeleton.MetricPointSet.torus_grid(d, N, side)
        exact = lattice_exit_probability(op, space, radius, t)
        est = stochastic.simulate_exit_prob(lattice_cfg(d, N, side, t / 200, 40_000), 0, radius, t)
        assert abs(est.p_hat - exact) <= 3 * est.ci_halfwidth + 1e-3

    def test_feynman_kac_against_expm(self):
        d, N, side = 1, 32, 2 * math.pi
        rng = np.random.default_rng(0)
        V = rng.uniform(0.0, 3.0, N)
        f = rng.uniform(-1.0, 1.0, N)
        t = 0.5
        op = lattice.add_potential(lattice.build_torus_laplacian(d, N, side), V)
        exact = (sla.expm(-t * op.symmetric_matrix().toarray()) @ f)[5]
        cfg = lattice_cfg(d, N, side, t / 1000, 40_000)
        est = stochastic.feynman_kac(cfg, V, f, t, 5)
        assert abs(est.value - exact) <= 3 * est.ci_halfwidth + 5e-3

    def test_feynman_kac_needs_grid(self):
        with pytest.raises(DomainError):
            stochastic.feynman_kac(line_cfg(0.1), np.zeros(4), np.zeros(4), 0.1, 0)


class TestHitAndRun:
    def test_gap(self):
        S = BallUnion([[1.0], [5.0]], [0.5, 0.2])
        g = S.gap(np.array([[1.0], [2.0], [6.0]]), np.array([2 * math.pi]))
        # 6.0 is closer to the ball at 1.0 through the wrap: 2pi - 5 - 0.5
        assert g.tolist() == pytest.approx([-0.5, 0.5, 2 * math.pi - 5.5])
        assert np.all(BallUnion.empty(2).gap(np.zeros((3, 2)), np.full(2, 1.0)) == math.inf)

    def test_whole_space_never_counts(self):
        cfg = WalkConfig({"kind": "torus", "sides": [2 * math.pi]}, dt=1e-4, num_paths=2000, seed=4)
        rep = stochastic.hit_and_run_pair(cfg, WholeSpace(), 0.5, 0.1, 0.05, [0.0])
        assert rep["lhs"].successes == 0 and rep["passed"]

    def test_empty_set_never_hit(self):
        cfg = WalkConfig({"kind": "torus", "sides": [2 * math.pi]}, dt=1e-4, num_paths=2000, seed=4)
        rep = stochastic.hit_and_run_pair(cfg, BallUnion.empty(1), 0.5, 0.1, 0.05, [0.0])
        assert rep["lhs"].successes == 0

    def test_small_configuration_passes(self):
        alpha = 0.02
        cfg = WalkConfig({"kind": "torus", "sides": [2 * math.pi]}, dt=alpha / 200, num_paths=20_000, seed=9)
        rep = stochastic.hit_and_run_pair(cfg, BallUnion([[math.pi]], [0.3]), 0.6, 4 * alpha, alpha, [math.pi - 0.8])
        assert rep["passed"]
        assert rep["rhs"].seed == cfg.seed + 1

    def test_lattice_variant(self):
        d, N, side = 1, 100, 2 * math.pi
        h = side / N
        space = skeleton.MetricPointSet.torus_grid(d, N, side)
        S = skeleton.ball_union([50], 3 * h, space)
        alpha = 2 * h * h
        rep = stochastic.hit_and_run_pair(lattice_cfg(d, N, side, alpha / 200, 5000), S, 4 * h, 4 * alpha, alpha, 40)
        assert rep["passed"]

    def test_order_of_times(self):
        cfg = WalkConfig(LINE, dt=1e-4, num_paths=10, seed=0)
        with pytest.raises(PreconditionError):
            stochastic.hit_and_run_pair(cfg, WholeSpace(), 0.5, 0.1, 0.2, [0.0])

    def test_radial_rejected(self):
        cfg = WalkConfig({"kind": "radial", "K": 0.0, "n": 3}, dt=1e-4, num_paths=10, seed=0)
        with pytest.raises(DomainError):
            stochastic.hit_and_run_pair(cfg, WholeSpace(), 0.5, 0.1, 0.05, 0.0)


class TestExitBoundCheck:
    def test_rows_and_flags(self):
        p = ProblemParams(K=0.0, n=3, R=1.0, rho=0.5)
        cfg = WalkConfig(LINE, dt=1e-9, num_paths=2000, seed=2)
        amax = 9.03e-6
        rep = stochastic.exit_bound_check(p, cfg, 1.0, 1.0, [1e-7, amax, 1.0], fit_grid=[0.1, 0.2, 0.3])
        rows = rep["rows"]
        assert rows[0]["status"] == "checked" and not rows[0]["vacuous"]
        assert rows[1]["vacuous"] and rows[1]["passed"]
        assert rows[2]["status"] == "precondition failed"
        assert rep["passed"]
        assert rep["fit"]["coefficient"] >= 1.0 / 20
