import numpy as np
import pytest

from hybrid_ris_isac import metrics
from hybrid_ris_isac.channels import RisConfiguration, all_passive, wrap_phase
from hybrid_ris_isac.config import SystemConfig
from hybrid_ris_isac.metrics import (
    BeamformingSolution,
    audit,
    beampattern_gain,
    cu_channel,
    cu_sinr,
    ris_noise_at_target,
    ris_output_power,
    target_channel,
    zero_beamforming,
)

from conftest import random_ris


def _random_bf(cfg, seed, power=None):
    rng = np.random.default_rng(seed)
    w = (rng.standard_normal((cfg.K, cfg.M))
         + 1j * rng.standard_normal((cfg.K, cfg.M)))
    B = rng.standard_normal((cfg.M, cfg.M)) + 1j * rng.standard_normal((cfg.M, cfg.M))
    R0 = B @ B.conj().T
    total = np.real(np.trace(R0)) + np.sum(np.abs(w) ** 2)
    scale = (power or cfg.P0) / total
    return BeamformingSolution(w=w * np.sqrt(scale), R0=R0 * scale)


class TestBeampatternGain:
    def test_orthogonal_beamformer_gives_zero(self, small_cfg, small_channels):
        cfg = small_cfg.replace(K=1)
        ch = small_channels
        ris = random_ris(cfg, 3)
        h = target_channel(ch, ris, 0)
        rng = np.random.default_rng(0)
        w = rng.standard_normal(cfg.M) + 1j * rng.standard_normal(cfg.M)
        w -= (h.conj() @ w) / (h.conj() @ h) * h   # project out h
        bf = BeamformingSolution(w=w[None, :], R0=np.zeros((cfg.M, cfg.M)))
        assert beampattern_gain(ch, ris, bf, 0) == pytest.approx(0.0, abs=1e-20)

    def test_isotropic_covariance(self, small_cfg, small_channels):
        ris = random_ris(small_cfg, 4)
        bf = BeamformingSolution(
            w=np.zeros((small_cfg.K, small_cfg.M)),
            R0=(small_cfg.P0 / small_cfg.M) * np.eye(small_cfg.M),
        )
        for l in range(small_cfg.L):
            h = target_channel(small_channels, ris, l)
            expected = small_cfg.P0 / small_cfg.M * np.real(h.conj() @ h)
            assert beampattern_gain(small_channels, ris, bf, l) == \
                pytest.approx(expected, rel=1e-12)

    def test_term_by_term_expansion(self, small_cfg, small_channels):
        ris = random_ris(small_cfg, 5)
        bf = _random_bf(small_cfg, 6)
        for l in range(small_cfg.L):
            h = target_channel(small_channels, ris, l)
            expected = np.real(h.conj() @ bf.R0 @ h) + sum(
                np.abs(h.conj() @ bf.w[k]) ** 2 for k in range(small_cfg.K)
            )
            assert beampattern_gain(small_channels, ris, bf, l) == \
                pytest.approx(expected, rel=1e-12)

    def test_phase_rotation_invariance(self, small_cfg, small_channels):
        ris = random_ris(small_cfg, 8)
        bf = _random_bf(small_cfg, 9)
        w2 = bf.w.copy()
        w2[0] *= np.exp(1j * 1.234)
        bf2 = BeamformingSolution(w=w2, R0=bf.R0)
        for l in range(small_cfg.L):
            assert beampattern_gain(small_channels, ris, bf, l) == \
                pytest.approx(beampattern_gain(small_channels, ris, bf2, l),
                              rel=1e-12)
        for k in range(small_cfg.K):
            assert cu_sinr(small_channels, ris, bf, k, small_cfg) == \
                pytest.approx(cu_sinr(small_channels, ris, bf2, k, small_cfg),
                              rel=1e-12)


class TestCuSinr:
    def test_single_user_passive(self, small_channels, small_cfg):
        cfg = SystemConfig(M=small_cfg.M, Nx=small_cfg.Nx, Ny=small_cfg.Ny,
                           K=1, L=small_cfg.L)
        from hybrid_ris_isac.channels import generate_channels

        ch = generate_channels(cfg, seed=11)
        ris = all_passive(cfg, wrap_phase(np.random.default_rng(1).uniform(
            0, 2 * np.pi, cfg.N)))
        bf = _random_bf(cfg, 12)
        h = cu_channel(ch, ris, 0)
        expected = np.abs(h.conj() @ bf.w[0]) ** 2 / cfg.sigma2_cu[0]
        assert cu_sinr(ch, ris, bf, 0, cfg) == pytest.approx(expected, rel=1e-12)

    def test_zero_beamformer_gives_zero(self, small_cfg, small_channels):
        ris = random_ris(small_cfg, 13)
        assert cu_sinr(small_channels, ris, zero_beamforming(small_cfg), 0,
                       small_cfg) == 0.0

    def test_all_active_noise_term(self, small_cfg, small_channels):
        rng = np.random.default_rng(14)
        beta = rng.uniform(0.3, small_cfg.beta_max, small_cfg.N)
        ris = RisConfiguration(q=np.ones(small_cfg.N), beta=beta,
                               theta=wrap_phase(rng.uniform(0, 2 * np.pi,
                                                            small_cfg.N)))
        bf = _random_bf(small_cfg, 15)
        for k in range(small_cfg.K):
            h = cu_channel(small_channels, ris, k)
            gains = np.abs(bf.w @ h.conj()) ** 2
            ris_noise = small_cfg.sigma2_ris * np.sum(
                np.abs(small_channels.h_iu[k]) ** 2 * beta**2)
            expected = gains[k] / (gains.sum() - gains[k] + ris_noise
                                   + small_cfg.sigma2_cu[k])
            assert cu_sinr(small_channels, ris, bf, k, small_cfg) == \
                pytest.approx(expected, rel=1e-12)


class TestRisOutputPower:
    def test_all_passive_is_zero(self, small_cfg, small_channels):
        ris = all_passive(small_cfg)
        bf = _random_bf(small_cfg, 16)
        assert ris_output_power(small_channels, ris, bf, small_cfg) == 0.0

    def test_noise_only_term(self, small_cfg, small_channels):
        ris = RisConfiguration(q=np.ones(small_cfg.N),
                               beta=np.full(small_cfg.N, 2.0),
                               theta=np.full(small_cfg.N, 1.0))
        bf = zero_beamforming(small_cfg)
        expected = 4 * small_cfg.N * small_cfg.sigma2_ris
        assert ris_output_power(small_channels, ris, bf, small_cfg) == \
            pytest.approx(expected, rel=1e-12)

    def test_monte_carlo_expectation(self, small_cfg, small_channels):
        ris = random_ris(small_cfg, 17, n_active=3)
        bf = _random_bf(small_cfg, 18)
        R = bf.total_covariance
        lam, U = np.linalg.eigh(R)
        sqrtR = U @ np.diag(np.sqrt(np.clip(lam, 0, None))) @ U.conj().T
        rng = np.random.default_rng(19)
        n = 100_000
        x = (rng.standard_normal((n, small_cfg.M))
             + 1j * rng.standard_normal((n, small_cfg.M))) / np.sqrt(2)
        x = x @ sqrtR.T                           # entry covariance R
        recv = x @ small_channels.G.conj()        # rows: (G^H x)^T
        noise = (rng.standard_normal((n, small_cfg.N))
                 + 1j * rng.standard_normal((n, small_cfg.N))) / np.sqrt(2)
        noise *= np.sqrt(small_cfg.sigma2_ris) * ris.q[None, :]
        out = (recv + noise) * (ris.phi * ris.q)[None, :]
        mc = np.mean(np.sum(np.abs(out) ** 2, axis=1))
        assert ris_output_power(small_channels, ris, bf, small_cfg) == \
            pytest.approx(mc, rel=0.01)

    def test_nondecreasing_in_beta(self, small_cfg, small_channels):
        ris = random_ris(small_cfg, 20, n_active=2)
        bf = _random_bf(small_cfg, 21)
        act = np.flatnonzero(ris.q)
        p0 = ris_output_power(small_channels, ris, bf, small_cfg)
        ris.beta[act[0]] = min(ris.beta[act[0]] + 1.0, small_cfg.beta_max)
        assert ris_output_power(small_channels, ris, bf, small_cfg) >= p0


class TestRisNoiseAtTarget:
    def test_passive_zero(self, small_cfg, small_channels):
        ris = all_passive(small_cfg)
        assert ris_noise_at_target(ris, small_channels, 0, small_cfg) == 0.0

    def test_all_active_unit(self, small_cfg, small_channels):
        ris = RisConfiguration(q=np.ones(small_cfg.N), beta=np.ones(small_cfg.N),
                               theta=np.full(small_cfg.N, 1.0))
        assert ris_noise_at_target(ris, small_channels, 0, small_cfg) == \
            pytest.approx(small_cfg.N * small_cfg.sigma2_ris, rel=1e-12)

    def test_single_active(self, small_cfg, small_channels):
        q = np.zeros(small_cfg.N)
        q[0] = 1.0
        beta = np.ones(small_cfg.N)
        beta[0] = 3.0
        ris = RisConfiguration(q=q, beta=beta, theta=np.full(small_cfg.N, 1.0))
        assert ris_noise_at_target(ris, small_channels, 1, small_cfg) == \
            pytest.approx(9.0 * small_cfg.sigma2_ris, rel=1e-12)


class TestAudit:
    def test_zero_power_solution(self, small_cfg, small_channels):
        ris = all_passive(small_cfg)
        report = audit(small_cfg, small_channels, ris,
                       zero_beamforming(small_cfg))
        assert not report.feasible
        for k in range(small_cfg.K):
            assert not report.record(f"cu_sinr[{k}]").satisfied
        assert report.record("bs_power").satisfied
        assert report.record("ris_power").satisfied
        assert report.objective == 0.0

    def test_overdriven_beamformers_flagged(self, small_cfg, small_channels):
        ris = all_passive(small_cfg)
        bf = _random_bf(small_cfg, 22)
        bf10 = BeamformingSolution(w=10 * bf.w, R0=bf.R0)
        report = audit(small_cfg, small_channels, ris, bf10)
        assert not report.record("bs_power").satisfied

    def test_all_passive_power_terms(self, small_cfg, small_channels):
        ris = all_passive(small_cfg)
        bf = _random_bf(small_cfg, 23)
        report = audit(small_cfg, small_channels, ris, bf)
        assert report.record("ris_power").lhs == 0.0
        for l in range(small_cfg.L):
            assert report.record(f"ris_noise_target[{l}]").lhs == 0.0

    def test_outputs_finite(self, small_cfg, small_channels):
        ris = random_ris(small_cfg, 24)
        bf = _random_bf(small_cfg, 25)
        report = audit(small_cfg, small_channels, ris, bf)
        assert np.isfinite(report.objective)
        for r in report.records:
            assert np.isfinite(r.lhs) and np.isfinite(r.slack)

    def test_json_serialization(self, small_cfg, small_channels):
        import json

        ris = random_ris(small_cfg, 26)
        report = audit(small_cfg, small_channels, ris,
                       zero_beamforming(small_cfg))
        d = json.loads(report.to_json())
        assert {"objective", "feasible", "constraints"} <= set(d)
        assert len(d["constraints"]) == len(report.records)

    def test_dimension_mismatch_rejected(self, small_cfg, small_channels):
        ris = all_passive(small_cfg)
        bad = BeamformingSolution(w=np.zeros((small_cfg.K, small_cfg.M + 1)),
                                  R0=np.zeros((small_cfg.M + 1, small_cfg.M + 1)))
        with pytest.raises(ValueError):
            audit(small_cfg, small_channels, ris, bad)


class TestBeamformingSolutionValidation:
    def test_non_psd_rejected(self, small_cfg):
        R0 = np.diag([1.0, -0.5] + [0.0] * (small_cfg.M - 2))
        bf = BeamformingSolution(w=np.zeros((small_cfg.K, small_cfg.M)), R0=R0)
        with pytest.raises(ValueError):
            bf.validate()

    def test_non_hermitian_rejected(self, small_cfg):
        R0 = np.zeros((small_cfg.M, small_cfg.M), dtype=complex)
        R0[0, 1] = 1.0
        bf = BeamformingSolution(w=np.zeros((small_cfg.K, small_cfg.M)), R0=R0)
        with pytest.raises(ValueError):
            bf.validate()
