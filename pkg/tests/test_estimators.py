"""LS/LMMSE/MMSE estimator contracts against from-scratch oracles."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chanest.estimators import lmmse_estimate, ls_estimate, mmse_oracle, nmse, nmse_db
from chanest.mimo import (
    ChannelModelConfig,
    channel_correlation,
    gen_channel,
    gen_pilots,
    noise_variance,
    transmit,
    unvec,
    vec,
)


def random_psd(dim, rng):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return a @ a.conj().T / dim + 0.1 * np.eye(dim)


def dense_lmmse_oracle(received, pilots, corr, noise_var):
    """The vectorized formula assembled from scratch with explicit inverses."""
    n_rx = received.shape[0]
    n_tx = pilots.shape[0]
    a = np.kron(pilots.T, np.eye(n_rx))
    gram = a @ corr @ a.conj().T + noise_var * np.eye(a.shape[0])
    h = corr @ a.conj().T @ np.linalg.inv(gram) @ vec(received)
    return unvec(h, n_rx, n_tx)


class TestLs:
    def test_noiseless_exact(self):
        cfg = ChannelModelConfig(n_rx=8, n_tx=4)
        h = gen_channel(cfg, np.random.default_rng(0))
        x = gen_pilots(4, 6)
        est = ls_estimate(h @ x, x)
        assert nmse(est, h) < 1e-20

    def test_scalar_division(self):
        est = ls_estimate(np.array([[6.0 + 0j]]), np.array([[2.0 + 0j]]))
        assert abs(est[0, 0] - 3.0) < 1e-14

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(1)
        h = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        x = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        y = h @ x + 0.1 * (rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3)))
        oracle = y @ x.conj().T @ np.linalg.inv(x @ x.conj().T)
        assert np.max(np.abs(ls_estimate(y, x) - oracle)) < 1e-10

    def test_rank_deficient_pilots_rejected(self):
        x = np.ones((2, 4), dtype=complex)  # duplicate rows
        with pytest.raises(ValueError, match="rank"):
            ls_estimate(np.ones((3, 4), dtype=complex), x)

    def test_unbiased_over_noise(self):
        cfg = ChannelModelConfig(n_rx=8, n_tx=4)
        rng = np.random.default_rng(2)
        h = gen_channel(cfg, rng)
        x = gen_pilots(4, 8)
        var = noise_variance(h, x, 5.0)
        draws = np.stack([ls_estimate(transmit(h, x, 5.0, rng), x) for _ in range(10_000)])
        mean = draws.mean(axis=0)
        # per-entry LS noise variance is var/L, halved per real component
        se = math.sqrt(var / 8 / 2 / 10_000)
        assert np.max(np.abs(mean.real - h.real)) < 4 * se
        assert np.max(np.abs(mean.imag - h.imag)) < 4 * se


class TestLmmse:
    def test_zero_noise_equals_ls(self):
        rng = np.random.default_rng(3)
        cfg = ChannelModelConfig(n_rx=4, n_tx=3)
        h = gen_channel(cfg, rng)
        x = gen_pilots(3, 5)
        y = transmit(h, x, 20.0, rng)
        corr = random_psd(12, rng)
        est = lmmse_estimate(y, x, corr, 0.0)
        assert np.max(np.abs(est - ls_estimate(y, x))) < 1e-8

    def test_identity_prior_is_wiener_shrinkage(self):
        rng = np.random.default_rng(4)
        cfg = ChannelModelConfig(n_rx=4, n_tx=2)
        h = gen_channel(cfg, rng)
        x = gen_pilots(2, 6)
        y = transmit(h, x, 10.0, rng)
        var = 1.7
        est = lmmse_estimate(y, x, np.eye(8, dtype=complex), var)
        expected = 6 / (6 + var) * ls_estimate(y, x)
        assert np.max(np.abs(est - expected)) < 1e-10

    def test_orthogonal_pilots_match_dense_oracle(self):
        # production takes the reduced sufficient-statistic path here
        rng = np.random.default_rng(5)
        cfg = ChannelModelConfig(n_rx=3, n_tx=2)
        h = gen_channel(cfg, rng)
        x = gen_pilots(2, 4)
        y = transmit(h, x, 8.0, rng)
        corr = random_psd(6, rng)
        var = noise_variance(h, x, 8.0)
        est = lmmse_estimate(y, x, corr, var)
        assert np.max(np.abs(est - dense_lmmse_oracle(y, x, corr, var))) < 1e-8

    def test_general_pilots_match_dense_oracle(self):
        rng = np.random.default_rng(6)
        h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        x = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        y = h @ x + 0.3 * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
        corr = random_psd(4, rng)
        est = lmmse_estimate(y, x, corr, 0.4)
        assert np.max(np.abs(est - dense_lmmse_oracle(y, x, corr, 0.4))) < 1e-8

    def test_non_hermitian_correlation_rejected(self):
        rng = np.random.default_rng(7)
        corr = random_psd(4, rng)
        corr[0, 1] += 1e-6
        with pytest.raises(ValueError, match="Hermitian"):
            lmmse_estimate(np.zeros((2, 3), dtype=complex), gen_pilots(2, 3), corr, 0.1)

    def test_wrong_correlation_size_rejected(self):
        with pytest.raises(ValueError, match="correlation"):
            lmmse_estimate(np.zeros((2, 3), dtype=complex), gen_pilots(2, 3),
                           np.eye(5, dtype=complex), 0.1)


class TestMmseOracle:
    cfg = ChannelModelConfig(n_rx=4, n_tx=3)

    def test_identical_to_lmmse_with_same_correlation(self):
        rng = np.random.default_rng(8)
        h = gen_channel(self.cfg, rng)
        x = gen_pilots(3, 5)
        y = transmit(h, x, 10.0, rng)
        var = noise_variance(h, x, 10.0)
        est1 = mmse_oracle(y, x, self.cfg, var, 500, np.random.default_rng(99))
        corr = channel_correlation(self.cfg, 500, np.random.default_rng(99))
        est2 = lmmse_estimate(y, x, corr, var)
        assert np.array_equal(est1, est2)

    def test_single_sample_output_in_prior_span(self):
        rng = np.random.default_rng(9)
        h = gen_channel(self.cfg, rng)
        x = gen_pilots(3, 5)
        y = transmit(h, x, 10.0, rng)
        cov_rng = np.random.default_rng(100)
        est = mmse_oracle(y, x, self.cfg, 0.5, 1, cov_rng)
        prior = vec(gen_channel(self.cfg, np.random.default_rng(100)))
        coeff = np.vdot(prior, vec(est)) / np.vdot(prior, prior)
        assert np.linalg.norm(vec(est) - coeff * prior) < 1e-8 * np.linalg.norm(prior)

    def test_beats_ls_on_average(self):
        rng = np.random.default_rng(10)
        x = gen_pilots(3, 5)
        corr = channel_correlation(self.cfg, 10_000, np.random.default_rng(0))
        ls_err, mmse_err = [], []
        for _ in range(100):
            h = gen_channel(self.cfg, rng)
            y = transmit(h, x, 10.0, rng)
            var = noise_variance(h, x, 10.0)
            ls_err.append(nmse(ls_estimate(y, x), h))
            mmse_err.append(nmse(lmmse_estimate(y, x, corr, var), h))
        assert np.mean(mmse_err) <= np.mean(ls_err)


def test_estimator_ordering_across_snr():
    # mean NMSE(MMSE with rich empirical prior) <= mean NMSE(LS) at every SNR
    cfg = ChannelModelConfig(n_rx=16, n_tx=8)
    x = gen_pilots(8, 12)
    corr = channel_correlation(cfg, 5000, np.random.default_rng(0))
    rng = np.random.default_rng(11)
    for snr in (0.0, 5.0, 10.0, 15.0, 20.0):
        ls_err, mmse_err = [], []
        for _ in range(100):
            h = gen_channel(cfg, rng)
            y = transmit(h, x, snr, rng)
            var = noise_variance(h, x, snr)
            ls_err.append(nmse(ls_estimate(y, x), h))
            mmse_err.append(nmse(lmmse_estimate(y, x, corr, var), h))
        assert np.mean(mmse_err) <= np.mean(ls_err)


class TestNmse:
    def test_exact_estimate(self):
        h = np.ones((2, 2), dtype=complex)
        assert nmse(h, h) == 0.0

    def test_null_estimator(self):
        h = np.full((3, 2), 1 + 1j)
        assert abs(nmse(np.zeros_like(h), h) - 1.0) < 1e-15

    def test_double_estimate(self):
        rng = np.random.default_rng(12)
        h = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        assert abs(nmse(2 * h, h) - 1.0) < 1e-12

    @given(scale=st.floats(-3, 3), seed=st.integers(0, 100))
    def test_scaling_property(self, scale, seed):
        rng = np.random.default_rng(seed)
        h = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        assert abs(nmse(scale * h, h) - (scale - 1) ** 2) < 1e-9

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            nmse(np.ones((2, 2), dtype=complex), np.zeros((2, 2), dtype=complex))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            nmse(np.ones((2, 2), dtype=complex), np.ones((2, 3), dtype=complex))

    def test_db_conversion(self):
        assert abs(nmse_db(0.1) + 10.0) < 1e-12
