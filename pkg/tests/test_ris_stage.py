import numpy as np
import pytest

from hybrid_ris_isac.bs_stage import rank_one_construct, solve_bs_stage
from hybrid_ris_isac.channels import (
    ChannelSet,
    RisConfiguration,
    all_passive,
    generate_channels,
    wrap_phase,
)
from hybrid_ris_isac.config import SystemConfig
from hybrid_ris_isac.conic import SolveOptions
from hybrid_ris_isac.metrics import (
    BeamformingSolution,
    beampattern_gain,
    cu_channel,
    cu_sinr,
    ris_noise_at_target,
    ris_output_power,
)
from hybrid_ris_isac.ris_stage import (
    RandomizationDiagnostics,
    bigm_constant,
    binarity_gap,
    binarity_penalty,
    build_ris_matrices,
    build_ris_sdp,
    gaussian_randomize,
    majorized_binarity_penalty,
    round_modes,
    solve_ris_stage,
)

from conftest import random_ris


@pytest.fixture(scope="module")
def stage_instance(small_cfg):
    """A solved beamformer stage feeding the RIS stage."""
    ch = generate_channels(small_cfg, seed=21)
    ris = all_passive(small_cfg, wrap_phase(
        np.random.default_rng(2).uniform(0, 2 * np.pi, small_cfg.N)))
    res, ctx = solve_bs_stage(small_cfg, ch, ris)
    assert res.status == "optimal"
    bf = rank_one_construct(res.W_star, res.R0_star, ctx.h_cu)
    mats = build_ris_matrices(small_cfg, ch, bf)
    return ch, bf, mats, ris


def _ris_from_phi(phi, q=None):
    amp = np.abs(phi)
    q = np.ones(len(phi)) if q is None else q
    beta = np.where(q == 0, 1.0, amp)
    return RisConfiguration(q=q, beta=beta, theta=wrap_phase(np.angle(phi)))


class TestMatrices:
    def test_zero_channels(self, small_cfg):
        cfg = small_cfg
        ch = ChannelSet(
            G=np.zeros((cfg.M, cfg.N), dtype=complex),
            h_bu=np.zeros((cfg.K, cfg.M), dtype=complex),
            h_iu=np.zeros((cfg.K, cfg.N), dtype=complex),
            a_tar=np.ones((cfg.L, cfg.N), dtype=complex),
            seed=0,
        )
        bf = BeamformingSolution(w=np.ones((cfg.K, cfg.M), dtype=complex),
                                 R0=np.eye(cfg.M, dtype=complex))
        mats = build_ris_matrices(cfg, ch, bf)
        assert np.allclose(mats.rbar_tar, 0)
        assert np.allclose(mats.rbar_cu, 0)
        assert np.allclose(mats.p_ris, cfg.sigma2_ris * np.eye(cfg.N))

    def test_target_lifting_identity(self, small_cfg, stage_instance):
        ch, bf, mats, _ = stage_instance
        rng = np.random.default_rng(3)
        phi = rng.uniform(0.3, 3.0, small_cfg.N) * np.exp(
            1j * rng.uniform(0, 2 * np.pi, small_cfg.N))
        v = np.concatenate([phi, [1.0]])
        ris = _ris_from_phi(phi)
        for l in range(small_cfg.L):
            lifted = float(np.real(v.conj() @ mats.rbar_tar[l] @ v))
            true = beampattern_gain(ch, ris, bf, l)
            assert lifted == pytest.approx(true, rel=1e-10)

    def test_cu_lifting_identity(self, small_cfg, stage_instance):
        ch, bf, mats, _ = stage_instance
        rng = np.random.default_rng(4)
        phi = rng.uniform(0.3, 3.0, small_cfg.N) * np.exp(
            1j * rng.uniform(0, 2 * np.pi, small_cfg.N))
        v = np.concatenate([phi, [1.0]])
        ris = _ris_from_phi(phi)
        for k in range(small_cfg.K):
            h = cu_channel(ch, ris, k)
            for j in range(small_cfg.K):
                lifted = float(np.real(v.conj() @ mats.rbar_cu[k, j] @ v)) \
                    + np.abs(ch.h_bu[k].conj() @ bf.w[j]) ** 2
                true = np.abs(h.conj() @ bf.w[j]) ** 2
                assert lifted == pytest.approx(true, rel=1e-10)

    def test_noise_diagonals(self, small_cfg, stage_instance):
        ch, bf, mats, _ = stage_instance
        assert np.allclose(mats.p_tar_diag, small_cfg.sigma2_ris)
        assert np.allclose(
            mats.sigma_ris_diag,
            small_cfg.sigma2_ris * np.abs(ch.h_iu) ** 2)
        assert np.linalg.eigvalsh(mats.p_ris)[0] >= \
            small_cfg.sigma2_ris * (1 - 1e-9)


class TestPenalty:
    def test_majorization_and_tangency(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            q = rng.uniform(0, 1, 6)
            q0 = rng.uniform(0, 1, 6)
            assert majorized_binarity_penalty(q, q0) >= \
                binarity_penalty(q) - 1e-12
            assert abs(majorized_binarity_penalty(q0, q0)
                       - binarity_penalty(q0)) <= 1e-12

    def test_binary_fixed_point_is_zero(self):
        q = np.array([0.0, 1.0, 1.0, 0.0])
        assert majorized_binarity_penalty(q, q) == 0.0
        assert binarity_penalty(q) == 0.0


class TestBuildRisSdp:
    def test_unpenalized_objective_is_pure_gain(self, small_cfg, stage_instance):
        _, _, mats, _ = stage_instance
        p, layout = build_ris_sdp(small_cfg, mats,
                                  np.full(small_cfg.N, 0.5), mu=0.0)
        assert list(p._obj_idx) == [layout.rho]

    def test_forcing_passive_matches_frozen_program(self, small_cfg,
                                                    stage_instance):
        _, _, mats, _ = stage_instance
        relaxed = solve_ris_stage(
            small_cfg, mats, np.zeros(small_cfg.N), 0.0,
            q_upper=np.zeros(small_cfg.N), opts=SolveOptions(tol=1e-8))
        frozen = solve_ris_stage(
            small_cfg, mats, None, 0.0, q_fixed=np.zeros(small_cfg.N),
            opts=SolveOptions(tol=1e-8))
        assert relaxed.status == "optimal" and frozen.status == "optimal"
        assert relaxed.rho_dd == pytest.approx(frozen.rho_dd, rel=1e-6)
        assert np.max(np.abs(relaxed.Z)) <= 1e-6 * bigm_constant(small_cfg)

    def test_invariants_at_solution(self, small_cfg, stage_instance):
        _, _, mats, _ = stage_instance
        sol = solve_ris_stage(small_cfg, mats, np.full(small_cfg.N, 0.5),
                              0.0, opts=SolveOptions(tol=1e-8))
        assert sol.status == "optimal"
        N = small_cfg.N
        assert sol.V[N, N].real == pytest.approx(1.0, abs=1e-6)
        assert np.all(np.real(np.diag(sol.V))[:N]
                      <= bigm_constant(small_cfg) * (1 + 1e-6))
        link = np.real(np.diag(sol.V)[:N] - np.diag(sol.Z)) - (1.0 - sol.q)
        assert np.max(np.abs(link)) <= 1e-5

    def test_z_coupling_at_binary_modes(self, small_cfg, stage_instance):
        # Drive q to a binary pattern (upper bounds pin the zeros, the
        # penalty pulls the rest to one); the big-M family then forces
        # Z = Q V Q within the coupling tolerance.
        _, _, mats, _ = stage_instance
        q = np.array([1.0, 0.0, 1.0, 0.0])
        base = solve_ris_stage(small_cfg, mats, q, 0.0, q_upper=q,
                               opts=SolveOptions(tol=1e-8))
        mu = 10.0 * abs(base.rho_dd)
        sol = solve_ris_stage(small_cfg, mats, np.ones(small_cfg.N), mu,
                              q_upper=q, opts=SolveOptions(tol=1e-8))
        assert sol.status == "optimal"
        assert binarity_gap(sol.q) <= 1e-3
        N = small_cfg.N
        q_bin = np.round(sol.q)
        expected = (q_bin[:, None] * sol.V[:N, :N]) * q_bin[None, :]
        eps_couple = 1e-4 * bigm_constant(small_cfg)
        assert np.max(np.abs(sol.Z - expected)) <= eps_couple

    def test_relaxation_upper_bounds_binary_enumeration(self, tiny_cfg):
        # N = 2: enumerate binary modes x phase grid x amplitude grid under
        # the exact evaluators; the relaxed optimum must not be below any
        # feasible configuration's min-gain.
        cfg = tiny_cfg
        ch = generate_channels(cfg, seed=31)
        ris0 = all_passive(cfg, wrap_phase(
            np.random.default_rng(0).uniform(0, 2 * np.pi, cfg.N)))
        res, ctx = solve_bs_stage(cfg, ch, ris0)
        bf = rank_one_construct(res.W_star, res.R0_star, ctx.h_cu)
        mats = build_ris_matrices(cfg, ch, bf)
        rsol = solve_ris_stage(cfg, mats, np.full(cfg.N, 0.5), 0.0,
                               opts=SolveOptions(tol=1e-8))
        assert rsol.status == "optimal"

        best = -np.inf
        phases = 2 * np.pi * (np.arange(16) + 1) / 16
        betas = np.linspace(0, cfg.beta_max, 5)
        for mask in range(4):
            q = np.array([(mask >> n) & 1 for n in range(2)], dtype=float)
            for t0 in phases:
                for t1 in phases:
                    beta_choices = [
                        (b0, b1)
                        for b0 in (betas if q[0] else [1.0])
                        for b1 in (betas if q[1] else [1.0])
                    ]
                    for b0, b1 in beta_choices:
                        ris = RisConfiguration(q=q.copy(),
                                               beta=np.array([b0, b1]),
                                               theta=np.array([t0, t1]))
                        if ris_output_power(ch, ris, bf, cfg) > cfg.P_ris_max:
                            continue
                        if any(ris_noise_at_target(ris, ch, l, cfg)
                               > cfg.xi_ris_max for l in range(cfg.L)):
                            continue
                        if any(cu_sinr(ch, ris, bf, k, cfg) < cfg.Gamma[k]
                               for k in range(cfg.K)):
                            continue
                        obj = min(beampattern_gain(ch, ris, bf, l)
                                  for l in range(cfg.L))
                        best = max(best, obj)
        assert rsol.rho_dd >= best - 1e-6 * abs(best)

    def test_monotone_in_ris_budget(self, small_cfg, stage_instance):
        _, _, mats, _ = stage_instance
        prev = -np.inf
        for budget_dbm in (-13.0, -8.0, -3.0):
            cfg = small_cfg.replace(
                P_ris_max=float(10 ** ((budget_dbm - 30) / 10)))
            sol = solve_ris_stage(cfg, mats, np.full(cfg.N, 0.5), 0.0,
                                  opts=SolveOptions(tol=1e-8))
            assert sol.status == "optimal"
            assert sol.rho_dd >= prev * (1 - 1e-7)
            prev = sol.rho_dd

    def test_unreachable_sinr_infeasible(self, small_cfg, stage_instance):
        ch, bf, _ = stage_instance
        weak_bf = BeamformingSolution(w=bf.w * 1e-6, R0=bf.R0 * 1e-12)
        cfg = small_cfg.replace(Gamma=np.full(small_cfg.K, 1e6))
        mats = build_ris_matrices(cfg, ch, weak_bf)
        sol = solve_ris_stage(cfg, mats, np.full(cfg.N, 0.5), 0.0)
        assert sol.status == "infeasible"


class TestRoundModes:
    def test_basic_rounding(self):
        q_hat, gap = round_modes(np.array([0.98, 0.02]))
        assert np.array_equal(q_hat, [1.0, 0.0])
        assert gap == pytest.approx(0.02)

    def test_tie_rounds_active(self):
        q_hat, _ = round_modes(np.array([0.5]))
        assert q_hat[0] == 1.0


class TestGaussianRandomize:
    def test_rank_one_shortcut_reproduces_gain(self, small_cfg, stage_instance):
        ch, bf, mats, _ = stage_instance
        rng = np.random.default_rng(6)
        phi = np.exp(1j * rng.uniform(0, 2 * np.pi, small_cfg.N))
        v = np.concatenate([phi, [1.0]])
        V = np.outer(v, v.conj())
        q_hat = np.zeros(small_cfg.N)
        cand, diag = gaussian_randomize(V, q_hat, mats, small_cfg, ch, bf,
                                        500, seed=7)
        assert diag.v_rank_one
        assert cand is not None
        rho = min(float(np.real(v.conj() @ mats.rbar_tar[l] @ v))
                  for l in range(small_cfg.L))
        assert diag.selected_objective == pytest.approx(rho, rel=1e-6)

    @staticmethod
    def _enumerate_best(cfg, ch, bf, q_hat, n_phase=64, n_beta=8):
        """Vectorized grid enumeration at fixed modes and beamformers."""
        th = 2 * np.pi * (np.arange(n_phase) + 1) / n_phase
        bgrid = np.linspace(0.0, cfg.beta_max, n_beta)
        axes_t = np.meshgrid(*([th] * cfg.N), indexing="ij")
        theta = np.stack([a.ravel() for a in axes_t], axis=1)
        beta_axes = [bgrid if q_hat[n] else np.array([1.0])
                     for n in range(cfg.N)]
        axes_b = np.meshgrid(*beta_axes, indexing="ij")
        beta = np.stack([a.ravel() for a in axes_b], axis=1)
        theta = np.repeat(theta, len(beta), axis=0)
        beta = np.tile(beta, (len(axes_t[0].ravel()), 1))
        phi = beta * np.exp(1j * theta)
        act = beta**2 * q_hat[None, :]
        k_diag = np.real(np.einsum("mn,mp,pn->n", ch.G.conj(),
                                   bf.total_covariance, ch.G))
        feas = act @ (k_diag + cfg.sigma2_ris) <= cfg.P_ris_max
        for l in range(cfg.L):
            feas &= (cfg.sigma2_ris * act @ np.abs(ch.a_tar[l]) ** 2
                     <= cfg.xi_ris_max)
        for k in range(cfg.K):
            h = (phi * ch.h_iu[k][None, :]) @ ch.G.T + ch.h_bu[k][None, :]
            gains = np.abs(h @ bf.w.conj().T) ** 2
            noise = cfg.sigma2_ris * act @ np.abs(ch.h_iu[k]) ** 2
            den = gains.sum(axis=1) - gains[:, k] + noise + cfg.sigma2_cu[k]
            feas &= gains[:, k] >= cfg.Gamma[k] * den
        obj = np.full(len(phi), np.inf)
        R = bf.total_covariance
        for l in range(cfg.L):
            hl = (np.conj(phi) * ch.a_tar[l][None, :]) @ ch.G.T
            obj = np.minimum(obj, np.real(np.einsum(
                "sm,sm->s", hl.conj(), hl @ R.T)))
        obj[~feas] = -np.inf
        return float(obj.max())

    def test_candidates_beat_most_of_enumeration(self, tiny_cfg):
        # Randomization recovers at least 95% of the enumerated optimum
        # under the same fixed beamformers.
        cfg = tiny_cfg
        wins = 0
        for seed in range(20):
            ch = generate_channels(cfg, seed=100 + seed)
            ris0 = all_passive(cfg, wrap_phase(
                np.random.default_rng(seed).uniform(0, 2 * np.pi, cfg.N)))
            res, ctx = solve_bs_stage(cfg, ch, ris0)
            if res.status != "optimal":
                continue
            bf = rank_one_construct(res.W_star, res.R0_star, ctx.h_cu)
            mats = build_ris_matrices(cfg, ch, bf)
            rsol = solve_ris_stage(cfg, mats, np.full(cfg.N, 0.5), 0.0,
                                   opts=SolveOptions(tol=1e-8))
            if rsol.status != "optimal":
                continue
            q_hat, _ = round_modes(rsol.q)
            cand, diag = gaussian_randomize(rsol.V, q_hat, mats, cfg, ch, bf,
                                            4000, seed=seed)
            best = self._enumerate_best(cfg, ch, bf, q_hat)
            if cand is not None and best > 0:
                if diag.selected_objective >= 0.95 * best:
                    wins += 1
        assert wins >= 18

    def test_degenerate_last_entry_guard(self, small_cfg, stage_instance):
        ch, bf, mats, _ = stage_instance
        # Covariance with (numerically) zero mass on the last entry: every
        # sample is discarded and the call reports no feasible candidate.
        V = np.diag(np.concatenate([np.ones(small_cfg.N), [1e-22]])).astype(complex)
        cand, diag = gaussian_randomize(V, np.zeros(small_cfg.N), mats,
                                        small_cfg, ch, bf, 300, seed=8)
        assert cand is None
        assert diag.n_discarded == 300

    def test_selected_candidate_passes_exact_audit(self, small_cfg,
                                                   stage_instance):
        ch, bf, mats, _ = stage_instance
        rsol = solve_ris_stage(small_cfg, mats, np.full(small_cfg.N, 0.5),
                               0.0, opts=SolveOptions(tol=1e-7))
        q_hat, _ = round_modes(rsol.q)
        cand, diag = gaussian_randomize(rsol.V, q_hat, mats, small_cfg, ch,
                                        bf, 2000, seed=9)
        assert cand is not None
        tol = small_cfg.tol_feas
        assert ris_output_power(ch, cand, bf, small_cfg) <= \
            small_cfg.P_ris_max * (1 + tol)
        for k in range(small_cfg.K):
            assert cu_sinr(ch, cand, bf, k, small_cfg) >= \
                small_cfg.Gamma[k] * (1 - tol)
        # lifting consistency on the selected candidate
        assert diag.lifting_mismatch <= 1e-8
