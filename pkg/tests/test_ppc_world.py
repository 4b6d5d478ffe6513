import numpy as np
import pytest
from hypothesis import given, strategies as st

from tlrm.errors import DomainError, NoSpikesError
from tlrm.ppc_world import (PPCWorld, PopulationCode, build_oscillator, com_decode, com_decode_real,
                            emit_spikes, make_ppc_dataset, oscillator_for_std, simulate_latent,
                            tuning_rates)

OMEGA = 2 * np.pi * 0.2


class TestOscillator:
    def test_zero_noise_gives_zero_covariance(self):
        m = build_oscillator(OMEGA, 0.1, 0.05, 0.0)
        assert np.array_equal(m.Q2, np.zeros((2, 2)))

    def test_underdamped_stable(self):
        m = build_oscillator(OMEGA, 0.1, 0.05, 1.0)
        ev = np.linalg.eigvals(m.A2)
        assert np.all(np.abs(ev.imag) > 0)
        assert np.all(np.abs(ev) < 1)
        assert np.all(np.linalg.eigvalsh(m.Q2) >= -1e-15)
        assert np.allclose(m.Q2, m.Q2.T)

    def test_undamped_limit(self):
        mods = [abs(np.linalg.eigvals(build_oscillator(OMEGA, z, 0.01, 1.0).A2)).max() for z in (1e-1, 1e-3, 1e-6)]
        assert mods[0] < mods[1] < mods[2] < 1
        assert 1 - mods[2] < 1e-7

    def test_transition_matches_matrix_exponential_of_continuous_dynamics(self):
        # independent route: eigen-decomposition of the continuous generator
        dt, zeta = 0.05, 0.1
        F = np.array([[0, 1], [-OMEGA**2, -2 * zeta * OMEGA]])
        w, V = np.linalg.eig(F)
        expected = (V @ np.diag(np.exp(w * dt)) @ np.linalg.inv(V)).real
        assert np.allclose(build_oscillator(OMEGA, zeta, dt, 0.3).A2, expected, atol=1e-13)

    def test_rejects_overdamped(self):
        with pytest.raises(DomainError):
            build_oscillator(OMEGA, 1.0, 0.05, 1.0)
        with pytest.raises(DomainError):
            build_oscillator(OMEGA, 1.5, 0.05, 1.0)

    def test_stationary_covariance_matches_long_run(self):
        m = oscillator_for_std(OMEGA, 0.1, 0.05, 0.5)
        x = simulate_latent(m, 1_000_000, seed=0)
        S = m.stationary_cov()
        assert abs(np.sqrt(S[0, 0]) - 0.5) < 1e-12
        emp = np.cov(x.T)
        assert abs(emp[0, 0] / S[0, 0] - 1) < 0.05
        assert abs(emp[1, 1] / S[1, 1] - 1) < 0.05

    def test_lag1_autocovariance(self):
        m = oscillator_for_std(OMEGA, 0.1, 0.05, 0.5)
        # slow mixing (~160-step correlation time): 1e6 steps for a 5% band
        x = simulate_latent(m, 1_000_000, seed=1)
        emp = np.mean(x[1:, 0] * x[:-1, 0])
        assert abs(emp / (m.A2 @ m.stationary_cov())[0, 0] - 1) < 0.05
        assert abs(np.var(x[:, 0]) / m.stationary_cov()[0, 0] - 1) < 0.05


class TestSimulate:
    def test_impulse_response_oscillates(self):
        m = build_oscillator(OMEGA, 0.1, 0.05, 0.0)
        period = int(np.ceil(2 * np.pi / OMEGA / 0.05))
        x = simulate_latent(m, period + 1, x0=[1.0, 0.0])
        assert np.any(x[:, 0] < 0)
        assert np.max(np.abs(x[period // 2:, 0])) < 1.0

    def test_seeded_determinism(self):
        m = oscillator_for_std(OMEGA, 0.1, 0.05, 0.5)
        assert np.array_equal(simulate_latent(m, 200, seed=5), simulate_latent(m, 200, seed=5))
        assert not np.array_equal(simulate_latent(m, 200, seed=5), simulate_latent(m, 200, seed=6))

    def test_T_must_be_positive(self):
        with pytest.raises(DomainError):
            simulate_latent(build_oscillator(OMEGA, 0.1, 0.05, 1.0), 0)


CODE = PopulationCode.tiling()


class TestTuning:
    def test_peak_and_one_sigma(self):
        i = 4
        r = tuning_rates(CODE, CODE.preferred[i])
        assert r[i] == CODE.gain
        r1 = tuning_rates(CODE, CODE.preferred[i] + CODE.sigma_tc)
        assert np.isclose(r1[i], CODE.gain * np.exp(-0.5), rtol=0, atol=1e-15)

    def test_midpoint_symmetry(self):
        mid = 0.5 * (CODE.preferred[6] + CODE.preferred[7])
        r = tuning_rates(CODE, mid)
        assert np.isclose(r[6], r[7], rtol=1e-14)

    @given(st.floats(-5, 5))
    def test_bounded_and_symmetric(self, s):
        r = tuning_rates(CODE, s)
        assert np.all(r <= CODE.gain)
        assert np.all(r >= 0)
        mirror = tuning_rates(PopulationCode(-CODE.preferred[::-1], CODE.sigma_tc, CODE.gain), -s)[::-1]
        assert np.allclose(r, mirror, rtol=1e-12, atol=0)

    def test_code_validation(self):
        with pytest.raises(DomainError):
            PopulationCode(np.array([0.0, 1.0, 1.5]), 1.0, 1.0)
        with pytest.raises(DomainError):
            PopulationCode(np.linspace(0, 1, 3), 0.0, 1.0)
        with pytest.raises(DomainError):
            PopulationCode(np.linspace(0, 1, 3), 1.0, -1.0)


class TestSpikes:
    def test_zero_rate(self):
        assert np.all(emit_spikes(np.zeros(1000), seed=0) == 0)

    @pytest.mark.parametrize("lam", [0.5, 2.0, 3.0, 8.0])
    def test_moments(self, lam):
        x = emit_spikes(np.full(100_000, lam), seed=int(lam * 10))
        n = x.size
        se_mean = np.sqrt(lam / n)
        # variance of the sample variance for Poisson: (mu4 - sigma^4)/n, mu4 = lam(1+3lam)
        se_var = np.sqrt((lam * (1 + 3 * lam) - lam**2) / n)
        assert abs(x.mean() - lam) < 3 * se_mean
        assert abs(x.var(ddof=1) - lam) < 3 * se_var

    def test_rate_three_bands(self):
        x = emit_spikes(np.full(100_000, 3.0), seed=11)
        assert abs(x.mean() - 3.0) < 0.05
        assert abs(x.var() - 3.0) < 0.1

    def test_negative_rate(self):
        with pytest.raises(DomainError):
            emit_spikes([1.0, -0.1])


class TestDecode:
    def test_single_spike(self):
        c = np.zeros(15, dtype=int)
        c[3] = 1
        assert com_decode(CODE, c) == CODE.preferred[3]

    def test_symmetric_counts(self):
        c = np.array([0, 0, 0, 1, 2, 5, 3, 9, 3, 5, 2, 1, 0, 0, 0])
        assert np.isclose(com_decode(CODE, c), CODE.preferred[7], atol=1e-15)

    def test_no_spikes(self):
        with pytest.raises(NoSpikesError):
            com_decode(CODE, np.zeros(15, dtype=int))
        with pytest.raises(NoSpikesError):
            com_decode_real(CODE, np.zeros(15))

    @given(st.lists(st.integers(0, 20), min_size=15, max_size=15).filter(lambda c: sum(c) > 0),
           st.integers(1, 50))
    def test_scale_invariance_exact(self, counts, k):
        c = np.array(counts)
        assert com_decode(CODE, c) == com_decode(CODE, k * c)

    @pytest.mark.parametrize("s", np.linspace(-1.2, 1.2, 9))
    def test_real_decode_recovers_centre(self, s):
        assert abs(com_decode_real(CODE, tuning_rates(CODE, s)) - s) < 0.02

    def test_real_decode_indicator(self):
        v = np.zeros(15)
        v[10] = 0.7
        assert com_decode_real(CODE, v) == CODE.preferred[10]


def test_dataset_shapes_and_determinism():
    w = PPCWorld()
    s1, c1 = make_ppc_dataset(w, 3, 50, 7)
    s2, c2 = make_ppc_dataset(w, 3, 50, 7)
    assert s1.shape == (3, 50, 2) and c1.shape == (3, 50, 15)
    assert c1.dtype == np.int64 and np.all(c1 >= 0)
    assert np.array_equal(s1, s2) and np.array_equal(c1, c2)
