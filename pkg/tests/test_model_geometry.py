import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from ricci_ucp.errors import DomainError, PreconditionError
from ricci_ucp.model_geometry import (
    CurvatureParams,
    RadialProfile,
    comparison_constants,
    doubling_constant,
    heat_kernel_upper,
    lambda_functional,
    lambda_lower_bound,
    omega_k,
    sn_k,
    unit_sphere_area,
    vol_k,
    volume_growth_bound,
)


def cp(K, n=3):
    return CurvatureParams(K, n)


def riemann_lambda(w, rho, R, m=1_000_000):
    """Midpoint-rule oracle for the Lambda double integral."""
    h = (R - rho) / m
    s = rho + h * (np.arange(m) + 0.5)
    inner = np.cumsum(h / w(s))  # int_rho^r 1/w up to the right end of each cell
    inner_mid = inner - 0.5 * h / w(s)
    return 1.0 / float(np.sum(w(s) * inner_mid) * h)


class TestSn:
    def test_flat(self):
        assert sn_k(cp(0.0), 0.7) == 0.7

    def test_sphere_quarter(self):
        assert sn_k(cp(1.0), math.pi / 2) == pytest.approx(1.0, rel=1e-15)

    def test_hyperbolic(self):
        assert sn_k(cp(-1.0), 1.0) == pytest.approx(1.1752011936438014, rel=1e-14)

    def test_beyond_conjugate_radius(self):
        with pytest.raises(DomainError):
            sn_k(cp(1.0), math.pi)
        with pytest.raises(DomainError):
            sn_k(cp(0.0), -0.1)

    @given(st.floats(1e-3, 5.0), st.floats(-1e-9, 1e-9))
    def test_continuous_in_K_near_zero(self, r, K):
        assert sn_k(cp(K), r) == pytest.approx(r, rel=1e-8)

    @given(st.floats(-4.0, 4.0), st.integers(2, 6))
    def test_monotone_on_grid(self, K, n):
        top = math.pi / (2 * math.sqrt(K)) if K > 0 else 6.0
        r = np.linspace(0.0, top * (1 - 1e-9), 200)
        vals = [sn_k(cp(K, n), x) for x in r]
        assert np.all(np.diff(vals) >= -1e-15)

    def test_rejects_n_below_two(self):
        with pytest.raises(DomainError):
            CurvatureParams(0.0, 1)


class TestOmegaVol:
    def test_flat_omega(self):
        assert omega_k(cp(0.0, 3), 2.0) == 4.0
        assert omega_k(cp(0.0, 2), 5.0) == 5.0

    def test_hyperbolic_omega(self):
        assert omega_k(cp(-1.0), 1.0) == pytest.approx(math.sinh(1.0) ** 2, rel=1e-14)

    @given(st.floats(0.01, 20.0), st.integers(2, 8))
    def test_flat_omega_is_power(self, r, n):
        assert omega_k(cp(0.0, n), r) == r ** (n - 1)

    def test_flat_volumes(self):
        assert vol_k(cp(0.0), 1.0) == pytest.approx(4 * math.pi / 3, rel=1e-14)
        assert vol_k(cp(0.0), 3.0) == pytest.approx(36 * math.pi, rel=1e-14)

    def test_hyperbolic_volume_closed_form(self):
        # 4 pi int_0^1 sinh^2 = 4 pi (sinh(2)/4 - 1/2)
        assert vol_k(cp(-1.0), 1.0) == pytest.approx(4 * math.pi * (math.sinh(2.0) / 4 - 0.5), rel=1e-10)

    def test_sphere_volume_closed_form(self):
        # S^3 of curvature 1: 4 pi int_0^R sin^2 = 2 pi (R - sin(2R)/2)
        R = 2.0
        assert vol_k(cp(1.0), R) == pytest.approx(2 * math.pi * (R - math.sin(2 * R) / 2), rel=1e-10)

    @given(st.floats(-2.0, 2.0), st.integers(2, 5), st.floats(0.05, 1.0), st.floats(0.01, 0.5))
    def test_volume_strictly_increasing(self, K, n, R, extra):
        c = cp(K, n)
        R2 = R + extra
        if K > 0 and R2 >= c.conjugate_radius:
            return
        assert vol_k(c, R2) > vol_k(c, R)

    @given(st.floats(-1.0, 1.0), st.floats(0.1, 1.2))
    @settings(max_examples=30)
    def test_model_ratio_identity(self, K, R):
        # Vol(B(R)) of the model, integrated from its own density, over Vol_K(R) is 1
        c = cp(K, 3)
        r = np.linspace(0.0, R, 20001)
        w = np.array([omega_k(c, x) for x in r])
        vol = unit_sphere_area(3) * integrate.trapezoid(w, r)
        assert vol / vol_k(c, R) == pytest.approx(1.0, rel=1e-7)

    def test_bad_radius(self):
        with pytest.raises(DomainError):
            vol_k(cp(0.0), 0.0)


class TestLambdaFunctional:
    def test_constant_from_zero(self):
        L = 2.5
        assert lambda_functional(RadialProfile.constant(L), 0.0, L) == pytest.approx(2 / L ** 2, rel=1e-10)

    def test_constant_unit(self):
        assert lambda_functional(RadialProfile.constant(3.0), 1.0, 3.0) == pytest.approx(0.5, rel=1e-10)

    def test_flat_3d_against_riemann_sum(self):
        prof = RadialProfile.model(cp(0.0, 3), r_max=3.0)
        oracle = riemann_lambda(lambda s: s ** 2, 0.5, 3.0)
        assert lambda_functional(prof, 0.5, 3.0) == pytest.approx(oracle, rel=1e-6)

    def test_sampled_profile_matches_callable(self):
        r = np.linspace(0.0, 3.0, 3001)
        prof = RadialProfile.from_samples(r, 1.0 + 0.0 * r)
        assert lambda_functional(prof, 1.0, 3.0) == pytest.approx(0.5, rel=1e-8)

    def test_vanishing_density_diverges(self):
        prof = RadialProfile(r_max=3.0, density=lambda r: 0.0 if 1.5 < r < 2.0 else 1.0)
        with pytest.raises(DomainError):
            lambda_functional(prof, 1.0, 3.0)

    def test_preconditions(self):
        prof = RadialProfile.constant(2.0)
        with pytest.raises(PreconditionError):
            lambda_functional(prof, 1.0, 3.0)
        with pytest.raises(PreconditionError):
            lambda_functional(prof, 1.5, 1.0)


class TestLambdaLowerBound:
    def test_flat_value(self):
        c3 = comparison_constants(3).c_n
        assert lambda_lower_bound(cp(0.0), 0.5, 3.0) == pytest.approx(c3 * 0.5 / (36 * math.pi), rel=1e-14)

    def test_c3_value(self):
        # (n-2) w_{n-1} / (2 (pi/2)^{n-1}) at n=3 is 4 pi / (2 pi^2 / 4) = 8 / pi
        assert comparison_constants(3).c_n == pytest.approx(8 / math.pi, rel=1e-15)

    def test_wedge_past_quarter_period(self):
        c = cp(1.0)
        expected = comparison_constants(3).c_n * min(math.sin(0.1), math.sin(2.0)) / vol_k(c, 2.0)
        assert lambda_lower_bound(c, 0.1, 2.0) == pytest.approx(expected, rel=1e-14)
        # rho close to R: sin(2.0) is the smaller factor only once rho passes pi - 2
        assert sn_k(c, 1.5) > sn_k(c, 2.0)
        expected = comparison_constants(3).c_n * math.sin(2.0) / vol_k(c, 2.0)
        assert lambda_lower_bound(c, 1.5, 2.0) == pytest.approx(expected, rel=1e-14)

    def test_rho_to_R_stays_finite(self):
        R = 3.0
        prof = RadialProfile.model(cp(0.0), r_max=R)
        for rho in (2.9, 2.99, 2.999):
            lb = lambda_lower_bound(cp(0.0), rho, R)
            assert math.isfinite(lb)
            assert lb <= lambda_functional(prof, rho, R)

    def test_rejects_dimension_two(self):
        with pytest.raises(DomainError):
            lambda_lower_bound(cp(0.0, 2), 0.5, 1.0)

    def test_sharp_flag_rejected_for_positive_K(self):
        with pytest.raises(DomainError):
            lambda_lower_bound(cp(1.0), 0.5, 1.0, comparison_constants(3, sharp_c_n=True))

    @given(st.floats(-2.0, 1.0), st.integers(3, 5), st.floats(0.05, 0.9), st.floats(0.2, 2.5))
    @settings(max_examples=60, deadline=None)
    def test_functional_dominates_bound(self, K, n, frac, R):
        c = cp(K, n)
        if K > 0 and R >= c.conjugate_radius * 0.999:
            R = c.conjugate_radius * 0.9
        rho = frac * R
        prof = RadialProfile.model(c, r_max=R)
        assert lambda_functional(prof, rho, R) >= lambda_lower_bound(c, rho, R)

    @given(st.floats(-2.0, 0.0), st.floats(0.05, 0.9), st.floats(0.2, 2.5))
    @settings(max_examples=30, deadline=None)
    def test_sharp_constant_still_below_for_nonpositive_K(self, K, frac, R):
        c = cp(K, 3)
        rho = frac * R
        prof = RadialProfile.model(c, r_max=R)
        sharp = comparison_constants(3, sharp_c_n=True)
        assert lambda_functional(prof, rho, R) >= lambda_lower_bound(c, rho, R, sharp)


class TestDoublingAndGrowth:
    def test_flat_doubling(self):
        D = doubling_constant(cp(0.0), 1.0)
        assert D == 2.0 ** 6
        assert D >= 2 ** 3  # exact Euclidean doubling ratio
        assert doubling_constant(cp(0.0), 17.0) == D

    def test_curved_doubling(self):
        assert doubling_constant(cp(1.0), 2.0) == pytest.approx(64 * math.e ** 2, rel=1e-15)

    def test_rejects_negative_defect(self):
        with pytest.raises(DomainError):
            doubling_constant(cp(-1.0), 1.0)

    def test_override_D(self):
        assert doubling_constant(cp(0.0), 1.0, comparison_constants(3, D=10.0)) == 10.0

    def test_growth_T_equals_R(self):
        D = 64.0
        assert volume_growth_bound(cp(0.5), 2.0, 2.0) == pytest.approx(
            D * math.exp(8 * (math.log(D) + 2.0 * math.sqrt(0.5))), rel=1e-14)

    def test_growth_flat_double(self):
        assert volume_growth_bound(cp(0.0), 1.3, 2.6) == pytest.approx(64.0 ** 17, rel=1e-12)

    def test_growth_curved(self):
        D = 64.0
        assert volume_growth_bound(cp(1.0), 1.0, 5.0) == pytest.approx(D * math.exp(40 * (math.log(D) + 1)),
                                                                       rel=1e-14)


class TestHeatKernel:
    def test_on_diagonal(self):
        C = comparison_constants(3).sturm_C
        assert heat_kernel_upper(cp(0.3), 2.0, 1.0, 0.0, 2.0) == pytest.approx(C * math.exp(0.3 * 4) / 2.0)

    def test_decade_decay(self):
        C = comparison_constants(3).sturm_C
        t = 0.4
        d = math.sqrt(5 * t * math.log(10))
        assert heat_kernel_upper(cp(0.0), 1.0, t, d, 3.0) == pytest.approx(C / 30.0, rel=1e-14)

    def test_curved_case(self):
        C = comparison_constants(3).sturm_C
        vb = vol_k(cp(0.0), math.sqrt(0.5))
        expected = C * math.e / vb * math.exp(-1 / 2.5)
        assert heat_kernel_upper(cp(1.0), 1.0, 0.5, 1.0, vb) == pytest.approx(expected, rel=1e-14)

    def test_time_beyond_R_squared(self):
        with pytest.raises(PreconditionError):
            heat_kernel_upper(cp(0.0), 1.0, 1.5, 0.0, 1.0)

    @given(st.floats(-2, 2), st.integers(2, 6), st.floats(0.01, 3.0))
    def test_pure(self, K, n, r):
        c = cp(K, n)
        if K > 0 and r >= c.conjugate_radius:
            return
        assert sn_k(c, r) == sn_k(c, r)
        assert vol_k(c, r) == vol_k(c, r)
