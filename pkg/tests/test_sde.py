"""VP diffusion process tests: schedule, marginals, reverse right-hand sides."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memdiff import sde
from memdiff.sde import GuidanceConfig, VPSchedule

SCHED = VPSchedule()


class TestSchedule:
    def test_default_endpoints(self):
        assert sde.beta(SCHED, 0.0) == pytest.approx(0.001)
        assert sde.beta(SCHED, SCHED.T) == pytest.approx(0.5)

    def test_midpoint(self):
        assert sde.beta(SCHED, 0.5) == pytest.approx(0.2505)

    def test_t_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            sde.beta(SCHED, -0.1)
        with pytest.raises(ValueError):
            sde.beta(SCHED, SCHED.T + 0.1)

    def test_invalid_schedule_rejected(self):
        with pytest.raises(ValueError):
            VPSchedule(beta0=0.5, beta1=0.001)
        with pytest.raises(ValueError):
            VPSchedule(T=0.0)


class TestDriftDiffusion:
    def test_drift_zero_state(self):
        assert np.array_equal(sde.drift(SCHED, np.zeros(2), 0.3), np.zeros(2))

    def test_drift_hand_value(self):
        # t = T: -0.5 * 0.5 * (1, 0) = (-0.25, 0)
        assert sde.drift(SCHED, np.array([1.0, 0.0]), 1.0) == pytest.approx(
            [-0.25, 0.0])

    @given(st.floats(-5.0, 5.0), st.floats(0.0, 1.0))
    @settings(max_examples=50)
    def test_drift_linearity(self, alpha, t):
        x = np.array([0.7, -1.3])
        assert sde.drift(SCHED, alpha * x, t) == pytest.approx(
            alpha * sde.drift(SCHED, x, t))

    def test_diffusion_hand_values(self):
        assert sde.diffusion(SCHED, 0.0) == pytest.approx(np.sqrt(0.001))
        assert sde.diffusion(SCHED, 1.0) == pytest.approx(np.sqrt(0.5))

    @given(st.floats(0.0, 1.0))
    @settings(max_examples=50)
    def test_diffusion_squared_is_beta(self, t):
        assert sde.diffusion(SCHED, t)**2 == pytest.approx(
            sde.beta(SCHED, t))


class TestMarginal:
    def test_t_zero(self):
        m, sig = sde.marginal(SCHED, 0.0)
        assert m == pytest.approx(1.0)
        assert sig == pytest.approx(0.0)

    def test_terminal_hand_values(self):
        # B(1) = 0.001 + 0.499/2 = 0.2505 -> m ~ 0.8823, sigma ~ 0.4709
        assert sde.beta_integral(SCHED, 1.0) == pytest.approx(0.2505)
        m, sig = sde.marginal(SCHED, 1.0)
        assert m == pytest.approx(0.8823, abs=5e-4)
        assert sig == pytest.approx(0.4709, abs=5e-4)

    def test_sigma_monotone_increasing(self):
        ts = np.linspace(1e-4, 1.0, 200)
        sig = np.array([sde.marginal(SCHED, t)[1] for t in ts])
        assert np.all(np.diff(sig) > 0.0)

    def test_beta_integral_matches_quadrature(self):
        # oracle: trapezoid rule on beta with 1e4 points, agreement 1e-8
        for t_end in (0.1, 0.5, 1.0):
            ts = np.linspace(0.0, t_end, 10000)
            numeric = np.trapezoid(sde.beta(SCHED, ts), ts)
            assert abs(sde.beta_integral(SCHED, t_end) - numeric) < 1e-8

    def test_variance_preservation_forward_euler(self):
        # forward Euler-Maruyama from N(0, I) keeps variance within 3% of 1
        rng = np.random.default_rng(0)
        n_paths, dt = 100000, 1e-3
        x = rng.normal(0.0, 1.0, n_paths)
        for k in range(int(1.0 / dt)):
            t = k * dt
            b = sde.beta(SCHED, t)
            x = x - 0.5 * b * x * dt + np.sqrt(b * dt) * rng.normal(
                0.0, 1.0, n_paths)
            if k % 100 == 0:
                assert abs(np.var(x) - 1.0) < 0.03
        assert abs(np.var(x) - 1.0) < 0.03

    def test_marginal_consistency_monte_carlo(self):
        # forward simulation from fixed x0 matches (m x0, sigma)
        rng = np.random.default_rng(1)
        x0, t_end, dt, n_paths = 1.5, 0.7, 1e-3, 50000
        x = np.full(n_paths, x0)
        steps = int(round(t_end / dt))
        for k in range(steps):
            t = k * dt
            b = sde.beta(SCHED, t)
            x = x - 0.5 * b * x * dt + np.sqrt(b * dt) * rng.normal(
                0.0, 1.0, n_paths)
        m, sig = sde.marginal(SCHED, t_end)
        assert abs(np.mean(x) - m * x0) < 4.0 * sig / np.sqrt(n_paths) + 1e-3
        assert abs(np.std(x) - sig) < 0.01


class TestScoreGain:
    def test_is_inverse_sigma(self):
        for t in (0.1, 0.5, 1.0):
            _, sig = sde.marginal(SCHED, t)
            assert sde.score_gain(SCHED, t) == pytest.approx(1.0 / sig)

    def test_floor_guards_t_zero(self):
        assert sde.score_gain(SCHED, 0.0) == pytest.approx(1e6)


class TestGuidance:
    def test_lambda_zero_reduces_to_conditional(self):
        fn = lambda x, t, lbl: np.array([1.0, 2.0]) if lbl is not None \
            else np.array([9.0, 9.0])
        out = sde.cfg_score(fn, np.zeros(2), 0.5, 0, GuidanceConfig(0.0))
        assert np.array_equal(out, [1.0, 2.0])

    def test_identical_branches_cancel(self):
        fn = lambda x, t, lbl: np.array([0.3, -0.7])
        out = sde.cfg_score(fn, np.zeros(2), 0.5, 1, GuidanceConfig(2.0))
        assert out == pytest.approx([0.3, -0.7])

    def test_hand_value(self):
        # lambda=1, cond=(1,0), uncond=(0,1) -> (2, -1)
        fn = lambda x, t, lbl: np.array([1.0, 0.0]) if lbl is not None \
            else np.array([0.0, 1.0])
        out = sde.cfg_score(fn, np.zeros(2), 0.5, 0, GuidanceConfig(1.0))
        assert out == pytest.approx([2.0, -1.0])

    def test_null_label_rejected(self):
        fn = lambda x, t, lbl: np.zeros(2)
        with pytest.raises(ValueError):
            sde.cfg_score(fn, np.zeros(2), 0.5, None, GuidanceConfig(1.0))

    @given(st.floats(0.0, 5.0))
    @settings(max_examples=30)
    def test_affine_in_lambda(self, lam):
        cond = np.array([1.0, 0.5])
        uncond = np.array([-0.2, 0.1])
        fn = lambda x, t, lbl: cond if lbl is not None else uncond
        out = sde.cfg_score(fn, np.zeros(2), 0.5, 0, GuidanceConfig(lam))
        assert out == pytest.approx(cond + lam * (cond - uncond))

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            GuidanceConfig(-0.1)


class TestReverseRhs:
    def test_f_ode_zero_score_zero_state(self):
        fn = lambda x, t, lbl: np.zeros(2)
        assert np.array_equal(
            sde.f_ode(fn, SCHED, np.zeros(2), 0.4), np.zeros(2))

    def test_f_ode_hand_value(self):
        # score (1,1), t=T, x=0: -0.5 * 0.5 * (1,1) = (-0.25, -0.25)
        fn = lambda x, t, lbl: np.ones(2)
        assert sde.f_ode(fn, SCHED, np.zeros(2), 1.0) == pytest.approx(
            [-0.25, -0.25])

    def test_f_sde_det_zero_score_is_drift(self):
        fn = lambda x, t, lbl: np.zeros(2)
        x = np.array([0.4, -1.1])
        assert sde.f_sde_det(fn, SCHED, x, 0.6) == pytest.approx(
            sde.drift(SCHED, x, 0.6))

    def test_f_sde_det_hand_value(self):
        # score (1,0), t=T, x=0: -0.5 * (1,0) = (-0.5, 0)
        fn = lambda x, t, lbl: np.array([1.0, 0.0])
        assert sde.f_sde_det(fn, SCHED, np.zeros(2), 1.0) == pytest.approx(
            [-0.5, 0.0])

    @given(st.floats(1e-3, 1.0))
    @settings(max_examples=30)
    def test_sde_minus_ode_is_half_beta_score(self, t):
        s = np.array([0.7, -0.2])
        fn = lambda x, t_, lbl: s
        x = np.array([0.3, 0.9])
        gap = sde.f_sde_det(fn, SCHED, x, t) - sde.f_ode(fn, SCHED, x, t)
        assert gap == pytest.approx(-0.5 * sde.beta(SCHED, t) * s)

    def test_f_ode_equals_f_sde_with_halved_score(self):
        s = np.array([1.2, -0.4])
        x = np.array([0.1, 0.2])
        full = lambda x_, t, lbl: s
        half = lambda x_, t, lbl: 0.5 * s
        assert sde.f_ode(full, SCHED, x, 0.8) == pytest.approx(
            sde.f_sde_det(half, SCHED, x, 0.8))

    def test_label_routes_through_guidance(self):
        fn = lambda x, t, lbl: np.array([1.0, 0.0]) if lbl is not None \
            else np.array([0.0, 1.0])
        guided = sde.f_ode(fn, SCHED, np.zeros(2), 1.0, label=0,
                           guidance=GuidanceConfig(1.0))
        # guided score (2, -1) -> -0.25 * (2, -1)
        assert guided == pytest.approx([-0.5, 0.25])
