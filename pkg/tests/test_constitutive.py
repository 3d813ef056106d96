# Copyright (c) 2025 左岚. All rights reserved.
"""本构积分器测试：解析不动点、模型退化与牛顿恒等式"""

import numpy as np
import pytest

from rheoformer.constitutive import (
    GiesekusParams,
    OldroydBParams,
    SeriesInterpolant,
    SymTensor2,
    TevpParams,
    TevpState,
    integrate_giesekus,
    integrate_oldroydb,
    integrate_tevp,
    oldroydb_extension_steady_state,
    oldroydb_shear_steady_state,
    rate_of_deformation,
    substeps_for,
    tevp_fastest_time,
    tevp_rhs,
    tevp_steady_state,
    upper_convected_derivative_rhs,
)
from rheoformer.rheo_types import ConfigurationError, FlowKind, IntegrationError
from rheoformer.signals import GrfConfig, homogeneous_flow, mixed_flow, sample_grf


def _random_tevp(rng) -> TevpParams:
    return TevpParams(
        G=rng.uniform(1.0, 5.0),
        sigma_y=rng.uniform(0.0, 2.0),
        eta_s=rng.uniform(0.05, 0.5),
        eta_p=rng.uniform(0.5, 2.0),
        k_plus=rng.uniform(0.2, 1.0),
        k_minus=rng.uniform(0.1, 1.0),
    )


class TestTevp:
    def test_rates_vanish_at_fixed_point(self, tevp_params):
        dsigma, dlam = tevp_rhs(tevp_params, TevpState(0.671429, 0.285714), 1.0)
        assert abs(dsigma) < 1e-5
        assert abs(dlam) < 1e-5

    def test_steady_state_formula(self, tevp_params):
        lam, sigma = tevp_steady_state(tevp_params, 1.0)
        assert lam == pytest.approx(0.2 / 0.7, abs=1e-12)
        assert sigma == pytest.approx(lam + (0.1 + lam), abs=1e-12)

    def test_long_horizon_converges(self, tevp_params):
        t_end, n = 200.0 / tevp_params.k_plus, 201
        dt = t_end / (n - 1)
        fastest = tevp_fastest_time(tevp_params, 1.0)
        series = integrate_tevp(tevp_params, np.ones(n), dt, TevpState(0.0, 1.0),
                                substeps=int(np.ceil(dt * 10 / fastest)))
        assert series.terminal.sigma12 == pytest.approx(0.671429, abs=1e-4)
        assert series.terminal.lam == pytest.approx(0.285714, abs=1e-4)

    def test_fixed_point_over_random_parameters(self):
        rng = np.random.default_rng(2025)
        for _ in range(50):
            params = _random_tevp(rng)
            rate = rng.uniform(0.2, 3.0)
            fastest = tevp_fastest_time(params, rate)
            slowest = max(params.stress_time, 1.0 / (params.k_plus + params.k_minus * rate))
            n = 31
            dt = 30.0 * slowest / (n - 1)
            series = integrate_tevp(params, np.full(n, rate), dt, TevpState(0.0, 1.0),
                                    substeps=int(np.ceil(dt * 10 / fastest)))
            lam_ss, sigma_ss = tevp_steady_state(params, rate)
            assert abs(series.terminal.lam - lam_ss) < 1e-4
            assert abs(series.terminal.sigma12 - sigma_ss) < 1e-4

    def test_structure_stays_in_unit_interval(self, tevp_params, rng):
        rates = 5.0 * rng.standard_normal(101)
        series = integrate_tevp(tevp_params, rates, 0.05, TevpState(0.0, 1.0),
                                substeps=substeps_for(0.05, tevp_fastest_time(tevp_params, 15.0)))
        assert np.all(series.lam >= 0.0) and np.all(series.lam <= 1.0)
        assert len(series) == 101

    def test_invalid_parameters(self):
        with pytest.raises(ConfigurationError):
            TevpParams(G=0.0, sigma_y=1.0, eta_s=0.1, eta_p=1.0, k_plus=0.2, k_minus=0.5).validate()
        with pytest.raises(ConfigurationError):
            TevpParams(G=1.0, sigma_y=-1.0, eta_s=0.1, eta_p=1.0, k_plus=0.2, k_minus=0.5).validate()

    def test_non_finite_input_reports_step(self, tevp_params):
        rates = np.ones(10)
        rates[4] = np.nan
        with pytest.raises(IntegrationError) as info:
            integrate_tevp(tevp_params, rates, 0.1, TevpState(0.0, 1.0))
        assert info.value.step_index == 4

    def test_unstable_step_raises(self):
        stiff = TevpParams(G=1e6, sigma_y=1.0, eta_s=0.1, eta_p=1.0, k_plus=0.2, k_minus=0.5)
        with pytest.raises(IntegrationError):
            integrate_tevp(stiff, np.ones(50), 1.0, TevpState(0.0, 1.0), substeps=1)


SHEAR_PARAMS = OldroydBParams(tau1=1.0, tau2=0.2, G0=1.0)


class TestOldroydB:
    def test_giesekus_without_mobility_is_oldroydb(self, rng):
        L = 0.5 * rng.standard_normal((60, 2, 2))
        init = SymTensor2(0.1, -0.2, 0.3)
        a = integrate_giesekus(GiesekusParams(1.0, 0.3, 2.0, 0.0), L, 0.02, init, substeps=2)
        b = integrate_oldroydb(OldroydBParams(1.0, 0.3, 2.0), L, 0.02, init, substeps=2)
        assert np.max(np.abs(a.as_array() - b.as_array())) < 1e-10

    def test_steady_simple_shear(self):
        grid = np.linspace(0.0, 20.0, 201)
        series = integrate_oldroydb(SHEAR_PARAMS, homogeneous_flow(FlowKind.SIMPLE_SHEAR, 1.0, grid),
                                    0.1, SymTensor2.zero(), substeps=5)
        assert series.terminal.xy == pytest.approx(1.0, abs=1e-4)
        assert series.terminal.n1 == pytest.approx(1.6, abs=1e-4)
        expected = oldroydb_shear_steady_state(SHEAR_PARAMS, 1.0)
        assert series.terminal.xy == pytest.approx(expected.xy, abs=1e-4)
        assert series.terminal.n1 == pytest.approx(expected.n1, abs=1e-4)

    def test_steady_planar_extension(self):
        rate = 0.1
        grid = np.linspace(0.0, 30.0, 301)
        series = integrate_oldroydb(SHEAR_PARAMS, homogeneous_flow(FlowKind.PLANAR_EXTENSION, rate, grid),
                                    0.1, SymTensor2.zero(), substeps=5)
        expected = oldroydb_extension_steady_state(SHEAR_PARAMS, rate)
        assert series.terminal.xx == pytest.approx(expected.xx, abs=1e-4)
        assert series.terminal.yy == pytest.approx(expected.yy, abs=1e-4)
        assert series.terminal.n1 == pytest.approx(expected.n1, abs=1e-4)
        assert abs(series.terminal.xy) < 1e-12

    def test_extension_without_steady_state(self):
        with pytest.raises(ConfigurationError):
            oldroydb_extension_steady_state(SHEAR_PARAMS, 0.5)

    @pytest.mark.parametrize("kind", list(FlowKind))
    def test_newtonian_identity_on_ramp(self, kind):
        params = OldroydBParams(tau1=0.5, tau2=0.5, G0=3.0)
        grid = np.linspace(0.0, 2.0, 41)
        rate = 0.5 + 0.75 * grid
        zeros = np.zeros_like(grid)
        L = mixed_flow(rate, zeros) if kind is FlowKind.PLANAR_EXTENSION else mixed_flow(zeros, rate)
        scale = params.G0 * params.tau1
        init = rate_of_deformation(L[0]).scaled(scale)
        series = integrate_oldroydb(params, L, 0.05, init, substeps=2)
        for i in range(len(grid)):
            expected = rate_of_deformation(L[i]).scaled(scale)
            assert abs(series[i].xx - expected.xx) < 1e-8
            assert abs(series[i].yy - expected.yy) < 1e-8
            assert abs(series[i].xy - expected.xy) < 1e-8

    def test_relaxation_without_flow(self):
        init = SymTensor2(2.0, -1.0, 0.5)
        grid = np.linspace(0.0, 3.0, 61)
        series = integrate_oldroydb(SHEAR_PARAMS, np.zeros((61, 2, 2)), 0.05, init, substeps=4)
        decay = np.exp(-grid / SHEAR_PARAMS.tau1)
        np.testing.assert_allclose(series.xx, 2.0 * decay, atol=1e-6)
        np.testing.assert_allclose(series.yy, -1.0 * decay, atol=1e-6)
        np.testing.assert_allclose(series.xy, 0.5 * decay, atol=1e-6)

    def test_startup_shear_matches_closed_form(self):
        # τ₂ = 0 时启动剪切的解析解
        params = OldroydBParams(tau1=0.5, tau2=0.0, G0=2.0)
        grid = np.linspace(0.0, 3.0, 61)
        series = integrate_oldroydb(params, homogeneous_flow(FlowKind.SIMPLE_SHEAR, 1.5, grid),
                                    0.05, SymTensor2.zero(), substeps=4)
        s = grid / params.tau1
        eta_p = params.G0 * params.tau1
        np.testing.assert_allclose(series.xy, eta_p * 1.5 * (1.0 - np.exp(-s)), atol=1e-6)
        np.testing.assert_allclose(series.xx, 2.0 * eta_p * 1.5 ** 2 * params.tau1 * (1.0 - np.exp(-s) - s * np.exp(-s)),
                                   atol=1e-6)


class TestGiesekus:
    def test_mobility_thins_shear_stress(self):
        grid = np.linspace(0.0, 20.0, 201)
        L = homogeneous_flow(FlowKind.SIMPLE_SHEAR, 2.0, grid)
        thinned = integrate_giesekus(GiesekusParams(1.0, 0.1, 1.0, 0.3), L, 0.1, SymTensor2.zero(), substeps=10)
        linear = integrate_giesekus(GiesekusParams(1.0, 0.1, 1.0, 0.0), L, 0.1, SymTensor2.zero(), substeps=10)
        assert np.all(np.isfinite(thinned.as_array()))
        assert thinned.terminal.xy < linear.terminal.xy
        assert thinned.terminal.n1 > 0.0

    def test_single_sample_returns_initial_state(self):
        init = SymTensor2(1.0, 2.0, 3.0)
        series = integrate_giesekus(GiesekusParams(1.0, 0.1, 1.0, 0.2), np.zeros((1, 2, 2)), 0.1, init)
        assert series.terminal == init

    def test_symmetric_output_channels(self):
        grid = np.linspace(0.0, 1.0, 11)
        series = integrate_giesekus(GiesekusParams(1.0, 0.1, 1.0, 0.2),
                                    mixed_flow(0.2 * np.ones(11), np.sin(grid)), 0.1, SymTensor2.zero(), 5)
        channels = series.channels()
        assert list(channels) == ["sigma_xx", "sigma_yy", "sigma_xy", "sigma_yx"]
        np.testing.assert_array_equal(channels["sigma_xy"], channels["sigma_yx"])

    @pytest.mark.parametrize("kwargs", [
        {"tau1": 0.0, "tau2": 0.0, "G0": 1.0, "alpha": 0.1},
        {"tau1": 1.0, "tau2": 2.0, "G0": 1.0, "alpha": 0.1},
        {"tau1": 1.0, "tau2": 0.1, "G0": 1.0, "alpha": 0.6},
    ])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ConfigurationError):
            GiesekusParams(**kwargs).validate()

    def test_velocity_gradient_shape_checked(self):
        with pytest.raises(ConfigurationError):
            integrate_giesekus(GiesekusParams(1.0, 0.1, 1.0, 0.2), np.zeros((5, 3, 3)), 0.1, SymTensor2.zero())


class TestHelpers:
    def test_upper_convected_derivative_of_identity(self):
        L = np.array([[0.0, 2.0], [0.0, 0.0]])
        result = upper_convected_derivative_rhs(SymTensor2(1.0, 1.0, 0.0), SymTensor2.zero(), L)
        assert result == SymTensor2(0.0, 0.0, -2.0)

    def test_rate_of_deformation(self):
        rate = rate_of_deformation(np.array([[0.5, 1.0], [0.0, -0.5]]))
        assert rate == SymTensor2(1.0, -1.0, 1.0)

    def test_interpolant_falls_back_to_linear(self):
        interp = SeriesInterpolant(np.array([0.0, 2.0, 4.0]), dt=1.0)
        assert float(interp(0.5)) == pytest.approx(1.0)
        spline = SeriesInterpolant(np.arange(6, dtype=float) ** 2, dt=1.0)
        assert float(spline(2.5)) == pytest.approx(6.25, abs=1e-10)

    def test_substeps(self):
        assert substeps_for(1.0, 0.5) == 100
        assert substeps_for(0.001, 1.0) == 1
        assert substeps_for(1.0, 0.0) == 1


class TestConvergenceOrder:
    """RK4 在平滑 GRF 输入下，子步数加倍时误差按四阶下降"""

    GRF = GrfConfig(n_points=81, t_end=10.0, length_scale=1.0)
    REFERENCE_SUBSTEPS = 64

    @staticmethod
    def _observed_orders(run):
        reference = run(TestConvergenceOrder.REFERENCE_SUBSTEPS)
        errors = [np.max(np.abs(run(s) - reference)) for s in (1, 2, 4)]
        return [np.log2(errors[i] / errors[i + 1]) for i in range(2)]

    def test_tevp_is_fourth_order(self, tevp_params):
        # 保持剪切率为正，避开 |γ̇| 的折点
        rate = np.exp(0.5 * sample_grf(self.GRF, 11))

        def run(substeps):
            series = integrate_tevp(tevp_params, rate, self.GRF.dt, TevpState(0.0, 0.8), substeps)
            return np.stack([series.sigma12, series.lam], axis=1)

        assert all(order >= 3.5 for order in self._observed_orders(run))

    def test_giesekus_is_fourth_order(self):
        params = GiesekusParams(tau1=1.0, tau2=0.2, G0=1.0, alpha=0.3)
        L = np.zeros((self.GRF.n_points, 2, 2))
        L[:, 0, 1] = sample_grf(self.GRF, 12)

        def run(substeps):
            series = integrate_giesekus(params, L, self.GRF.dt, SymTensor2(0.0, 0.0, 0.0), substeps)
            return np.stack([series.xx, series.yy, series.xy], axis=1)

        assert all(order >= 3.5 for order in self._observed_orders(run))
