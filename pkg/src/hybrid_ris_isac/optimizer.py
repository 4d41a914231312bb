"""Alternating optimization driver: beamformer stage <-> RIS stage.

Each outer iteration solves the relaxed beamformer SDP and recovers exact
rank-one beamformers, then re-optimizes the RIS mode/reflection state (an
inner penalty loop drives the relaxed modes to binary), rounds, and runs
Gaussian randomization. A candidate RIS state is accepted only when the
audited objective does not decrease, so the reported objective sequence is
monotone by construction; convergence is declared on the audited
objective, never on relaxed surrogate values.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .bs_stage import DegenerateCuError, rank_one_construct, solve_bs_stage
from .channels import (
    ChannelSet,
    RisConfiguration,
    TWO_PI,
    generate_channels,
    wrap_phase,
)
from .config import SystemConfig, config_from_dict
from .conic import SolveOptions, solve_sdp
from .metrics import BeamformingSolution, ConstraintReport, audit
from .ris_stage import (
    build_ris_matrices,
    build_ris_sdp,
    extract_ris_solution,
    gaussian_randomize,
    round_modes,
    solve_ris_stage,
    update_sca_objective,
)

BASELINE_SCHEMES = ("fixed_mode", "full_passive", "full_active")


def _derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


@dataclass
class RunOptions:
    """Knobs of the alternating loop (defaults match the evaluation setup)."""

    eps_conv: float = 1e-3          # relative objective tolerance
    max_outer_iter: int = 30
    max_init_retries: int = 5
    l_gau: int = 10_000             # Gaussian randomization samples
    mu_init_factor: float = 1e-2    # initial penalty vs first relaxed gain
    mu_growth: float = 10.0
    mu_cap_factor: float = 1e6
    binarity_tol: float = 0.01
    max_inner_iter: int = 20
    seed: int = 0
    bs_tol: float = 1e-7
    ris_tol: float = 1e-3
    ris_max_iter: int = 20_000
    verbose: bool = False


@dataclass
class IterationRecord:
    iteration: int
    gain_after_bs: float        # audited objective after the beamformer stage
    gain_after_ris: float       # audited objective after the RIS update
    binarity_gap: float
    ris_active_count: int
    inner_iterations: int
    randomization_feasible: int
    wall_time: float


@dataclass
class SolveTrace:
    """Full record of one run: per-iteration trail plus the final solution."""

    scheme: str
    seed: int
    channel_seed: int
    config: dict
    iterations: list
    objective: float
    converged: bool
    status: str                 # converged | max_iterations | stalled |
    #                             infeasible | failed_audit
    n_outer: int
    wall_time: float
    beamforming: BeamformingSolution | None = None
    ris: RisConfiguration | None = None
    report: ConstraintReport | None = None
    versions: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_from_dict(self.config).config_hash()


def initialize(cfg: SystemConfig, ch: ChannelSet, seed: int) -> RisConfiguration:
    """All-passive start with i.i.d. uniform phases on (0, 2*pi].

    Guarantees the RIS power and RIS noise constraints hold trivially at
    iteration zero.
    """
    rng = np.random.default_rng(seed)
    theta = wrap_phase(rng.uniform(0.0, TWO_PI, cfg.N))
    return RisConfiguration(q=np.zeros(cfg.N), beta=np.ones(cfg.N), theta=theta)


def _initial_state(cfg: SystemConfig, seed: int,
                   q_fixed: np.ndarray | None) -> RisConfiguration:
    rng = np.random.default_rng(seed)
    theta = wrap_phase(rng.uniform(0.0, TWO_PI, cfg.N))
    q = np.zeros(cfg.N) if q_fixed is None else np.asarray(q_fixed, dtype=float)
    return RisConfiguration(q=q.copy(), beta=np.ones(cfg.N), theta=theta)


def _versions() -> dict:
    import clarabel
    import scipy
    import scs

    from . import __version__

    return {
        "hybrid_ris_isac": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "clarabel": clarabel.__version__,
        "scs": scs.__version__,
    }


def _relaxed_ris_update(cfg, mats, ris, opts, state):
    """Inner penalty loop; returns the final relaxed solution and stats.

    The penalty weight persists across outer iterations (escalation is not
    restarted); solver iterates are reused as warm starts both within the
    loop and across outer iterations (the sparsity pattern is identical).

    The first linearization point of each loop is the all-active vector:
    the big-M rows only force q_n >= (V_nn - 1)/(beta_max^2 - 1), so the
    relaxed modes are degenerate upward and a low tangent point would
    penalize amplitudes that are actually worth keeping.
    """
    q_prev = np.ones(cfg.N)
    mu = state.get("mu")
    prob = layout = None
    rsol = None
    raw = state.get("raw")
    inner = 0
    while inner < opts.max_inner_iter:
        inner += 1
        if prob is None:
            prob, layout = build_ris_sdp(cfg, mats, q_prev,
                                         0.0 if mu is None else mu)
        else:
            update_sca_objective(prob, layout, q_prev, mu)
        sol = solve_sdp(prob, SolveOptions(
            tol=opts.ris_tol, backend="auto", warm_start=raw,
            max_iter=opts.ris_max_iter))
        if sol.status not in ("optimal", "numerical_failure") or sol.raw is None:
            return rsol, inner, sol.status
        raw = sol.raw
        state["raw"] = raw
        cand = extract_ris_solution(cfg, mats, layout, sol)
        if cand.V is None:
            return rsol, inner, sol.status
        rsol = cand
        if mu is None:
            scale = max(abs(rsol.rho_dd), 1e-300)
            mu = opts.mu_init_factor * scale
            state["mu"] = mu
            state["mu_cap"] = mu * opts.mu_cap_factor
            q_prev = rsol.q.copy()
            continue
        if rsol.gap <= opts.binarity_tol:
            break
        mu = min(mu * opts.mu_growth, state["mu_cap"])
        state["mu"] = mu
        q_prev = rsol.q.copy()
    return rsol, inner, "optimal"


def _run_loop(cfg: SystemConfig, ch: ChannelSet, opts: RunOptions, scheme: str,
              q_fixed: np.ndarray | None) -> SolveTrace:
    t_run = time.time()
    ch.validate(cfg)

    ris = None
    bs_res = bs_ctx = None
    for retry in range(opts.max_init_retries + 1):
        ris = _initial_state(cfg, _derive_seed(opts.seed, 1, retry), q_fixed)
        bs_res, bs_ctx = solve_bs_stage(cfg, ch, ris,
                                        SolveOptions(tol=opts.bs_tol))
        if bs_res.status == "optimal":
            break
    if bs_res.status != "optimal":
        return SolveTrace(
            scheme=scheme, seed=opts.seed, channel_seed=ch.seed,
            config=cfg.to_dict(), iterations=[], objective=float("nan"),
            converged=False, status="infeasible", n_outer=0,
            wall_time=time.time() - t_run, versions=_versions(),
        )

    records: list[IterationRecord] = []
    bf = None
    status = "max_iterations"
    prev_obj = None
    sca_state: dict = {}
    # Once the relaxed mode search converges, the loop continues with the
    # modes frozen (the reflection state keeps refining) until the audited
    # objective converges again, so every scheme terminates at a fixed
    # point of the same frozen-mode update.
    mode_frozen = q_fixed
    for it in range(1, opts.max_outer_iter + 1):
        t_it = time.time()
        if it > 1:
            bs_res, bs_ctx = solve_bs_stage(cfg, ch, ris,
                                            SolveOptions(tol=opts.bs_tol))
            if bs_res.status != "optimal":
                status = "stalled"
                break
        try:
            bf = rank_one_construct(bs_res.W_star, bs_res.R0_star, bs_ctx.h_cu)
        except DegenerateCuError:
            status = "stalled"
            break
        gain_after_bs = audit(cfg, ch, ris, bf).objective

        mats = build_ris_matrices(cfg, ch, bf)
        if mode_frozen is None:
            rsol, inner, ris_status = _relaxed_ris_update(cfg, mats, ris, opts,
                                                          sca_state)
            if rsol is None:
                status = "stalled"
                break
            q_hat, gap = round_modes(rsol.q)
            # Re-solve the convex restriction at the rounded modes; its
            # lifted matrix samples better than the fractional-q one. Fall
            # back to the relaxed solution if rounding broke feasibility.
            refined = solve_ris_stage(
                cfg, mats, None, 0.0, q_fixed=q_hat,
                opts=SolveOptions(tol=opts.ris_tol,
                                  max_iter=opts.ris_max_iter))
            if refined.V is not None and np.isfinite(refined.rho_dd):
                rsol = refined
        else:
            rsol = solve_ris_stage(
                cfg, mats, None, 0.0, q_fixed=mode_frozen,
                opts=SolveOptions(tol=opts.ris_tol,
                                  max_iter=opts.ris_max_iter))
            if rsol.V is None:
                status = "stalled"
                break
            inner = 1
            q_hat, gap = np.asarray(mode_frozen, dtype=float), 0.0

        cand, diag = gaussian_randomize(
            rsol.V, q_hat, mats, cfg, ch, bf, opts.l_gau,
            _derive_seed(opts.seed, 2, it),
        )
        random_failed = cand is None
        if cand is not None and diag.selected_objective >= gain_after_bs:
            ris = cand
            gain_after_ris = diag.selected_objective
        else:
            gain_after_ris = gain_after_bs

        records.append(IterationRecord(
            iteration=it, gain_after_bs=gain_after_bs,
            gain_after_ris=gain_after_ris, binarity_gap=gap,
            ris_active_count=ris.n_active, inner_iterations=inner,
            randomization_feasible=diag.n_feasible,
            wall_time=time.time() - t_it,
        ))
        if opts.verbose:
            print(f"[{scheme}] iter {it}: gain {gain_after_ris:.4e} "
                  f"(bs {gain_after_bs:.4e}) active {ris.n_active} "
                  f"gap {gap:.3f} inner {inner}")

        if random_failed:
            status = "stalled"
            break
        if prev_obj is not None:
            rel = abs(gain_after_ris - prev_obj) / max(abs(prev_obj), 1e-300)
            if rel < opts.eps_conv:
                if mode_frozen is None and q_fixed is None:
                    mode_frozen = ris.q.copy()   # mode search settled
                    prev_obj = gain_after_ris
                    continue
                status = "converged"
                prev_obj = gain_after_ris
                break
        prev_obj = gain_after_ris

    report = audit(cfg, ch, ris, bf) if bf is not None else None
    converged = status == "converged"
    if report is not None and not report.feasible:
        status = "failed_audit"
        converged = False
    return SolveTrace(
        scheme=scheme, seed=opts.seed, channel_seed=ch.seed,
        config=cfg.to_dict(), iterations=records,
        objective=report.objective if report else float("nan"),
        converged=converged, status=status, n_outer=len(records),
        wall_time=time.time() - t_run, beamforming=bf, ris=ris, report=report,
        versions=_versions(),
    )


def run_alternating(cfg: SystemConfig, ch: ChannelSet,
                    opts: RunOptions | None = None) -> SolveTrace:
    """Run the proposed joint mode-selection / beamforming design."""
    return _run_loop(cfg, ch, opts or RunOptions(), "proposed", None)


def run_baseline(scheme: str, cfg: SystemConfig, ch: ChannelSet,
                 opts: RunOptions | None = None,
                 n_active: int = 12) -> SolveTrace:
    """Run a frozen-mode baseline: fixed_mode(n_active) / full_passive / full_active.

    The alternating loop is unchanged except that the mode vector is a
    constant, the binarity machinery is dropped, and randomization applies
    to the lifted reflection matrix at the frozen modes. Amplitudes of the
    frozen active elements remain design variables.
    """
    opts = opts or RunOptions()
    if scheme == "full_passive":
        q = np.zeros(cfg.N)
    elif scheme == "full_active":
        q = np.ones(cfg.N)
    elif scheme == "fixed_mode":
        if n_active > cfg.N:
            raise ValueError("n_active cannot exceed N")
        q = np.zeros(cfg.N)
        q[:n_active] = 1.0
    else:
        raise ValueError(f"unknown baseline scheme {scheme!r}")
    name = scheme if scheme != "fixed_mode" else f"fixed_mode({n_active})"
    return _run_loop(cfg, ch, opts, name, q)


def run_scheme(scheme: str, cfg: SystemConfig, ch: ChannelSet,
               opts: RunOptions | None = None, n_active: int = 12) -> SolveTrace:
    if scheme == "proposed":
        return run_alternating(cfg, ch, opts)
    return run_baseline(scheme, cfg, ch, opts, n_active=n_active)


# ---- trace (de)serialization ------------------------------------------------

def _carray_to_json(a: np.ndarray) -> dict:
    return {"re": np.real(a).tolist(), "im": np.imag(a).tolist()}


def _carray_from_json(d: dict) -> np.ndarray:
    return np.asarray(d["re"]) + 1j * np.asarray(d["im"])


def trace_to_dict(trace: SolveTrace) -> dict:
    d = {
        "scheme": trace.scheme, "seed": trace.seed,
        "channel_seed": trace.channel_seed, "config": trace.config,
        "config_hash": trace.config_hash,
        "objective": trace.objective, "converged": trace.converged,
        "status": trace.status, "n_outer": trace.n_outer,
        "wall_time": trace.wall_time, "versions": trace.versions,
        "iterations": [asdict(r) for r in trace.iterations],
    }
    if trace.beamforming is not None:
        d["beamforming"] = {
            "w": _carray_to_json(trace.beamforming.w),
            "R0": _carray_to_json(trace.beamforming.R0),
        }
    if trace.ris is not None:
        d["ris"] = {
            "q": trace.ris.q.tolist(),
            "beta": trace.ris.beta.tolist(),
            "theta": trace.ris.theta.tolist(),
        }
    if trace.report is not None:
        d["report"] = json.loads(trace.report.to_json())
    return d


def save_trace(trace: SolveTrace, path: str) -> None:
    with open(path, "w") as f:
        json.dump(trace_to_dict(trace), f, indent=2)


def load_trace(path: str) -> SolveTrace:
    with open(path) as f:
        d = json.load(f)
    bf = ris = None
    if "beamforming" in d:
        bf = BeamformingSolution(
            w=_carray_from_json(d["beamforming"]["w"]),
            R0=_carray_from_json(d["beamforming"]["R0"]),
        )
    if "ris" in d:
        ris = RisConfiguration(
            q=np.asarray(d["ris"]["q"]), beta=np.asarray(d["ris"]["beta"]),
            theta=np.asarray(d["ris"]["theta"]),
        )
    return SolveTrace(
        scheme=d["scheme"], seed=d["seed"], channel_seed=d["channel_seed"],
        config=d["config"],
        iterations=[IterationRecord(**r) for r in d["iterations"]],
        objective=d["objective"], converged=d["converged"], status=d["status"],
        n_outer=d["n_outer"], wall_time=d["wall_time"], beamforming=bf,
        ris=ris, report=None, versions=d.get("versions", {}),
    )
