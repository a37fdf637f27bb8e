import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from scsparc.channels import AWGNChannel, BECChannel, BSCChannel
from scsparc.design import SparcParams, build_base_matrix, seed_sections
from scsparc.exceptions import DivergenceError, ParameterError, UndecodableError
from scsparc.numerics import RngStream, gauss_hermite
from scsparc.state_evolution import (
    SectionMmse,
    decoded_frontier,
    eps_tau,
    eps_tau_semi_analytic,
    f_M_delta,
    h_delta,
    info_integral,
    initial_sigma_closed_form,
    max_iters,
    perp_diagnostics,
    potential_curvature,
    regime_classify,
    run_se,
    se_step,
    wave_progress,
    wave_speed_g,
)


class TestEpsTau:
    def test_noiseless_limit(self):
        est = eps_tau(1e-4, 16, 10_000, RngStream(0))
        assert est.mean >= 1 - 1e-6

    def test_uninformative_limit(self):
        est = eps_tau(1e6, 16, 100_000, RngStream(1))
        assert est.within(1 / 16)

    def test_two_entries_against_quadrature(self):
        # with two entries the true-entry mass depends on U1 - U2 ~ N(0, 2) only
        tau = 1.0
        rule = gauss_hermite(200)
        oracle = rule.expect(special.expit(1 / tau + math.sqrt(2 / tau) * rule.nodes))
        assert eps_tau(tau, 2, 200_000, RngStream(2)).within(oracle)

    @pytest.mark.parametrize("tau", [0.0, -0.5])
    def test_tau_positive(self, tau):
        with pytest.raises(ParameterError):
            eps_tau(tau, 4, 1000, RngStream(0))

    def test_section_size(self):
        with pytest.raises(ParameterError):
            eps_tau(1.0, 1, 1000, RngStream(0))

    def test_common_random_numbers_agree_with_eps(self):
        mmse = SectionMmse(16, 50_000, RngStream(3))
        psi, se = mmse(0.4)
        est = eps_tau(0.4, 16, 50_000, RngStream(4))
        assert abs((1 - est.mean) - psi) <= 4 * math.hypot(se, est.std_error)

    def test_common_random_numbers_are_deterministic(self):
        a = SectionMmse(8, 1000, RngStream(5))
        b = SectionMmse(8, 1000, RngStream(5))
        assert a(0.3) == b(0.3)

    @given(st.floats(0.05, 5.0), st.floats(0.05, 5.0))
    @settings(max_examples=30, deadline=None)
    def test_mmse_monotone_in_tau(self, t1, t2):
        mmse = SectionMmse(16, 2000, RngStream(6))
        lo, hi = sorted((t1, t2))
        assert mmse(lo)[0] <= mmse(hi)[0] + 1e-12

    def test_semi_analytic_cross_check(self):
        tau, M = 1.0, 1024
        mc = eps_tau(tau, M, 20_000, RngStream(7))
        assert abs(eps_tau_semi_analytic(tau, M) - mc.mean) < 5e-3


def uncoupled(gamma=16, rho=0.0, L=64, M=16, rate=0.5):
    params = SparcParams(L, M, gamma, 0, rho, rate)
    return params, build_base_matrix(gamma, 0, rho), seed_sections(gamma, 0)


class TestSeStep:
    def test_all_unknown(self):
        params, base, seeds = uncoupled()
        sigma, *_ = se_step(np.ones(16), base, params, AWGNChannel(1.0), SectionMmse(16, 500), seeds)
        np.testing.assert_allclose(sigma, 1.0, atol=1e-14)

    def test_all_known(self):
        params, base, seeds = uncoupled()
        v = 0.7
        sigma, phi, tau, _, _ = se_step(np.zeros(16), base, params, AWGNChannel(v), SectionMmse(16, 500), seeds)
        assert np.all(sigma == 0)
        np.testing.assert_allclose(phi, v, rtol=1e-14)
        np.testing.assert_allclose(tau, params.rate / math.log(16) * v, rtol=1e-12)

    def test_uninformative_channel(self):
        params, base, seeds = uncoupled()
        with pytest.raises(DivergenceError):
            se_step(np.ones(16), base, params, BSCChannel(0.5), SectionMmse(16, 500), seeds)

    def test_psi_range(self):
        params, base, seeds = uncoupled()
        with pytest.raises(ParameterError):
            se_step(np.full(16, 1.5), base, params, AWGNChannel(1.0), SectionMmse(16, 500), seeds)

    def test_first_step_closed_form(self):
        params = SparcParams(64, 16, 32, 2, 0.05, 0.5)
        base = build_base_matrix(32, 2, 0.05)
        traj = run_se(params, base, AWGNChannel(1.0), 1, n_mc=1000)
        np.testing.assert_allclose(traj.sigma[0], initial_sigma_closed_form(32, 2, 0.05), atol=1e-12, rtol=0)
        assert traj.sigma[0][0] == pytest.approx(0.05 * (32 - 16) / (32 - 2 - 1), abs=1e-15)

    def test_closed_form_needs_room(self):
        with pytest.raises(ParameterError):
            initial_sigma_closed_form(16, 2, 0.1)


@pytest.fixture(scope="module")
def coupled_traj():
    params = SparcParams(256, 32, 32, 2, 0.02, 0.8 * 0.5 * math.log(11))
    base = build_base_matrix(32, 2, 0.02)
    traj = run_se(params, base, AWGNChannel(0.1), 20, stop_tol=0.0, n_mc=20_000, stream=RngStream(11))
    return params, base, traj


class TestRunSe:
    def test_seeded_blocks_stay_zero(self, coupled_traj):
        params, _, traj = coupled_traj
        assert np.all(traj.psi[:, list(traj.seeds)] == 0)
        assert np.all((traj.psi >= 0) & (traj.psi <= 1))

    def test_sigma_reproducible_from_psi(self, coupled_traj):
        _, base, traj = coupled_traj
        for t in range(traj.iterations):
            np.testing.assert_allclose(traj.sigma[t], base.W @ traj.psi[t] / base.gamma, rtol=1e-14)

    def test_symmetry(self, coupled_traj):
        _, _, traj = coupled_traj
        np.testing.assert_allclose(traj.psi, traj.psi[:, ::-1], atol=1e-12, rtol=0)

    def test_monotone(self, coupled_traj):
        _, _, traj = coupled_traj
        assert np.all(traj.psi[1:] <= traj.psi[:-1] + 4 * traj.psi_se[1:])
        assert np.all(np.diff(traj.sigma, axis=0) <= 1e-15)

    def test_perp_diagnostics_non_negative(self, coupled_traj):
        _, _, traj = coupled_traj
        sig_perp, tau_perp = perp_diagnostics(traj)
        assert np.all(sig_perp >= -1e-15)
        assert np.all(tau_perp >= -1e-12)

    def test_decodes_below_capacity(self, coupled_traj):
        _, _, traj = coupled_traj
        assert traj.mean_psi()[-1] < 1e-2

    def test_stops_at_tolerance(self):
        params = SparcParams(64, 16, 16, 1, 0.0, 0.2)
        traj = run_se(params, build_base_matrix(16, 1, 0.0), AWGNChannel(0.01), 50, stop_tol=1e-10, n_mc=2000)
        assert traj.iterations < 50 and traj.psi[-1].max() <= 1e-10

    def test_needs_one_step(self):
        params = SparcParams(64, 16, 16, 1, 0.0, 0.2)
        with pytest.raises(ParameterError):
            run_se(params, build_base_matrix(16, 1, 0.0), AWGNChannel(0.01), 0)


class TestWaveAnalysis:
    def test_h_awgn(self):
        assert h_delta(0.2, AWGNChannel(1.0)) == pytest.approx(math.exp(0.3) - 1, abs=1e-10)
        assert h_delta(0.2, AWGNChannel(1.0)) == pytest.approx(0.3499, abs=1e-4)

    def test_h_vanishes_with_gap(self):
        assert h_delta(1e-8, AWGNChannel(1.0)) < 1e-7

    def test_h_bsc_self_consistent(self):
        ch = BSCChannel(0.11)
        gap = 0.1 * ch.capacity()
        h = h_delta(gap, ch)
        total = integrate.quad(lambda s: ch.f_out(s), 0, h, epsabs=1e-12, limit=200)[0]
        assert abs(total - 1.5 * gap) <= 1e-6

    def test_h_infeasible(self):
        with pytest.raises(ParameterError):
            h_delta(1.0, AWGNChannel(1.0))

    def test_info_integral_extends_past_one(self):
        ch = BECChannel(0.2)
        assert info_integral(ch, 1.3) == pytest.approx(info_integral(ch, 1.0) + 0.3 * ch.f_out(1.0), rel=1e-10)

    def test_speed_against_brute_force(self):
        ch = AWGNChannel(1.0)
        cap = 0.5 * math.log(2)
        gap = 0.15 * cap
        rho = 0.25 * (math.exp(1.5 * gap) - 1) / 2
        for omega in (1, 3, 6):
            width = 2 * omega + 1

            def lhs(k):
                u = 2 * rho + k * (1 - rho) / width
                return math.log1p(min(u, 1.0)) + max(u - 1, 0.0) * 0.5 - k * (1 - rho) * 0.5 / width

            assert lhs(0) < 1.5 * gap
            expected = max([k for k in range(width + 1) if lhs(k) < 1.5 * gap])
            assert wave_speed_g(omega, rho, gap, ch) == expected

    def test_speed_non_decreasing_in_omega(self):
        ch = AWGNChannel(1.0)
        gap = 0.15 * ch.capacity()
        rho = 0.25 * h_delta(gap, ch) / 2
        speeds = [wave_speed_g(w, rho, gap, ch) for w in range(1, 17)]
        assert all(b >= a for a, b in zip(speeds, speeds[1:]))

    def test_max_iters(self):
        assert max_iters(64, 4) == 8
        assert max_iters(10, 5) == 1
        assert max_iters(65, 4) == 9
        with pytest.raises(UndecodableError):
            max_iters(64, 0)

    def test_threshold_arithmetic(self):
        assert f_M_delta(512, 0.25, 1) == pytest.approx(512**-0.25 / (0.25 * math.sqrt(math.log(512))), rel=1e-14)

    @given(st.integers(1, 20), st.floats(0.01, 0.49))
    @settings(max_examples=40, deadline=None)
    def test_threshold_decreasing_in_M(self, log_m, delta):
        assert f_M_delta(2 ** (log_m + 1), delta) < f_M_delta(2**log_m, delta)

    def test_threshold_diverges_as_delta_vanishes(self):
        assert f_M_delta(64, 1e-9) > 1e8
        with pytest.raises(ParameterError):
            f_M_delta(64, 0.0)


class TestRegime:
    def test_above_capacity(self):
        params = SparcParams(64, 16, 16, 1, 0.01, 0.5)
        assert regime_classify(params, AWGNChannel(1.0)).regime == "undecodable"

    def test_single_shot(self):
        rate = 0.3 * 0.5 * 0.99
        params = SparcParams(1024, 16, 16, 1, 0.01, rate)
        report = regime_classify(params, AWGNChannel(1.0), delta=0.1)
        assert report.regime == "single-shot"

    def test_wave(self):
        ch = AWGNChannel(1.0)
        cap = ch.capacity()
        gap = cap - 0.75 * cap
        rho = 0.25 * h_delta(gap, ch) / 2
        params = SparcParams(1024, 64, 32, 3, rho, 0.75 * cap)
        report = regime_classify(params, ch)
        assert report.regime == "wave"
        assert report.g >= 1 and report.T * report.g >= params.gamma / 2
        assert 0 <= report.g <= 2 * params.omega + 1
        assert report.rho_max == pytest.approx(report.h_delta / 2)

    def test_zero_spread_warns(self):
        params = SparcParams(1024, 64, 32, 3, 0.0, 0.2)
        with pytest.warns(RuntimeWarning):
            report = regime_classify(params, AWGNChannel(1.0))
        assert report.notes

    def test_delta_override_validated(self):
        params = SparcParams(1024, 64, 32, 3, 0.01, 0.2)
        with pytest.raises(ParameterError):
            regime_classify(params, AWGNChannel(1.0), delta=0.9)


class TestFrontier:
    def test_counts_leading_blocks(self):
        assert decoded_frontier([0, 0, 0.5, 1, 1, 0.5, 0, 0], 0.1) == 2

    def test_full(self):
        assert decoded_frontier(np.zeros(7), 0.1) == 4

    def test_progress(self):
        psi = np.array([
            [0, 1, 1, 1, 1, 1, 1, 0],
            [0, 0, 1, 1, 1, 1, 0, 0],
            [0, 0, 0, 1, 1, 0, 0, 0],
            [0, 0, 0, 0, 0, 0, 0, 0],
        ], dtype=float)
        traj = type("T", (), {"psi": psi})()
        fronts, ok, meet = wave_progress(traj, 1, 0.1)
        assert fronts == [1, 2, 3, 4] and ok and meet == 3
        _, ok2, _ = wave_progress(traj, 2, 0.1)
        assert not ok2

    def test_stalled_wave(self):
        traj = type("T", (), {"psi": np.array([[0, 1, 1, 0], [0, 1, 1, 0]], dtype=float)})()
        _, ok, meet = wave_progress(traj, 1, 0.1)
        assert not ok and meet is None


def test_awgn_potential_is_convex():
    # second derivative of the potential is 1 / (2 (1 + sigma)^2), smallest at the last grid point
    assert potential_curvature(AWGNChannel(1.0)) == pytest.approx(1 / (2 * 1.95**2), rel=1e-4)
