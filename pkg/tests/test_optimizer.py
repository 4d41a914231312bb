import numpy as np
import pytest

from hybrid_ris_isac.channels import generate_channels
from hybrid_ris_isac.config import SystemConfig
from hybrid_ris_isac.metrics import audit, zero_beamforming
from hybrid_ris_isac.optimizer import (
    RunOptions,
    initialize,
    load_trace,
    run_alternating,
    run_baseline,
    save_trace,
    trace_to_dict,
)


@pytest.fixture(scope="module")
def fast_opts():
    return RunOptions(seed=3, l_gau=2000, max_outer_iter=12)


@pytest.fixture(scope="module")
def small_trace(small_cfg, small_channels, fast_opts):
    return run_alternating(small_cfg, small_channels, fast_opts)


class TestInitialize:
    def test_power_constraints_trivially_met(self, small_cfg, small_channels):
        ris = initialize(small_cfg, small_channels, seed=0)
        report = audit(small_cfg, small_channels, ris,
                       zero_beamforming(small_cfg))
        assert report.record("ris_power").lhs == 0.0
        for l in range(small_cfg.L):
            assert report.record(f"ris_noise_target[{l}]").lhs == 0.0

    def test_same_seed_same_phases(self, small_cfg, small_channels):
        a = initialize(small_cfg, small_channels, seed=5)
        b = initialize(small_cfg, small_channels, seed=5)
        assert np.array_equal(a.theta, b.theta)

    def test_different_seeds_differ(self, small_cfg, small_channels):
        a = initialize(small_cfg, small_channels, seed=5)
        b = initialize(small_cfg, small_channels, seed=6)
        assert not np.allclose(a.theta, b.theta)

    def test_all_passive(self, small_cfg, small_channels):
        ris = initialize(small_cfg, small_channels, seed=7)
        assert np.all(ris.q == 0) and np.all(ris.beta == 1)
        assert np.all(ris.theta > 0) and np.all(ris.theta <= 2 * np.pi)


class TestAlternatingLoop:
    def test_converges_and_audits_feasible(self, small_trace):
        assert small_trace.status == "converged"
        assert small_trace.converged
        assert small_trace.report.feasible
        assert small_trace.objective > 0

    def test_objective_sequence_monotone(self, small_trace):
        gains = [r.gain_after_ris for r in small_trace.iterations]
        for a, b in zip(gains, gains[1:]):
            assert b >= a - 1e-6

    def test_bs_stage_never_hurts(self, small_trace):
        # The beamformer re-solve starts from a feasible incumbent, so the
        # audited objective cannot drop across the stage boundary.
        it = small_trace.iterations
        for prev, cur in zip(it, it[1:]):
            assert cur.gain_after_bs >= prev.gain_after_ris - 1e-6

    def test_deterministic_rerun(self, small_cfg, small_channels, fast_opts,
                                 small_trace):
        again = run_alternating(small_cfg, small_channels, fast_opts)
        assert again.objective == pytest.approx(small_trace.objective,
                                                rel=1e-4)
        assert again.n_outer == small_trace.n_outer

    def test_final_pair_consistency(self, small_cfg, small_channels,
                                    small_trace):
        report = audit(small_cfg, small_channels, small_trace.ris,
                       small_trace.beamforming)
        assert report.objective == pytest.approx(small_trace.objective,
                                                 rel=1e-9)

    def test_infeasible_scenario_flagged(self, small_cfg, small_channels):
        cfg = small_cfg.replace(Gamma=np.full(small_cfg.K, 1e12))
        trace = run_alternating(cfg, small_channels,
                                RunOptions(seed=1, max_init_retries=1))
        assert trace.status == "infeasible"
        assert not trace.converged
        assert trace.n_outer == 0


class TestBaselines:
    def test_full_passive_keeps_ris_silent(self, small_cfg, small_channels,
                                           fast_opts):
        trace = run_baseline("full_passive", small_cfg, small_channels,
                             fast_opts)
        assert trace.status == "converged"
        assert trace.ris.n_active == 0
        assert trace.report.record("ris_power").lhs == 0.0
        assert np.all(trace.ris.beta == 1.0)

    def test_fixed_mode_pins_pattern(self, small_cfg, small_channels,
                                     fast_opts):
        trace = run_baseline("fixed_mode", small_cfg, small_channels,
                             fast_opts, n_active=2)
        assert trace.ris.n_active == 2
        assert np.array_equal(trace.ris.q[:2], [1.0, 1.0])
        assert trace.scheme == "fixed_mode(2)"

    def test_fixed_mode_bounds_checked(self, small_cfg, small_channels):
        with pytest.raises(ValueError):
            run_baseline("fixed_mode", small_cfg, small_channels,
                         n_active=small_cfg.N + 1)

    def test_unknown_scheme_rejected(self, small_cfg, small_channels):
        with pytest.raises(ValueError):
            run_baseline("half_active", small_cfg, small_channels)

    def test_full_active_starved_budget_collapses(self, small_cfg,
                                                  small_channels):
        cfg = small_cfg.replace(P_ris_max=1e-12)
        trace = run_baseline("full_active", cfg, small_channels,
                             RunOptions(seed=2, l_gau=1000))
        assert trace.report is not None and trace.report.feasible
        reference = run_baseline("full_passive", small_cfg, small_channels,
                                 RunOptions(seed=2, l_gau=1000))
        assert trace.objective <= 1e-3 * reference.objective

    def test_proposed_beats_passive_on_shared_channel(self, small_cfg,
                                                      small_channels,
                                                      fast_opts, small_trace):
        passive = run_baseline("full_passive", small_cfg, small_channels,
                               fast_opts)
        assert small_trace.objective >= 0.95 * passive.objective


class TestTraceSerialization:
    def test_roundtrip(self, small_cfg, small_channels, small_trace, tmp_path):
        path = tmp_path / "trace.json"
        save_trace(small_trace, str(path))
        loaded = load_trace(str(path))
        assert loaded.objective == small_trace.objective
        assert loaded.status == small_trace.status
        assert np.array_equal(loaded.ris.q, small_trace.ris.q)
        assert np.allclose(loaded.beamforming.w, small_trace.beamforming.w)
        # re-audit the archived solution from regenerated channels
        from hybrid_ris_isac.config import config_from_dict

        cfg = config_from_dict(loaded.config)
        ch = generate_channels(cfg, loaded.channel_seed)
        report = audit(cfg, ch, loaded.ris, loaded.beamforming)
        assert report.objective == pytest.approx(small_trace.objective,
                                                 rel=1e-9)

    def test_provenance_fields(self, small_trace):
        d = trace_to_dict(small_trace)
        assert d["config_hash"]
        assert {"numpy", "scipy"} <= set(d["versions"])
        assert d["iterations"][0]["iteration"] == 1
