"""BS beamforming stage: SDR of the transmit design under a fixed RIS state.

Given the RIS mode/reflection state, the communication beamformers are
lifted to PSD matrices W_k (rank constraint dropped) and optimized jointly
with the sensing covariance R0 to maximize the minimum target gain subject
to the BS power, per-CU SINR, and RIS output power constraints. A
rank-one-feasible beamformer set is then recovered in closed form.

Internally all powers are expressed in milliwatts and every constraint row
is equilibrated to O(1) magnitudes; raw pathloss scales (~1e-10) would
otherwise wreck the conic solver's conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import ChannelSet, RisConfiguration
from .config import SystemConfig
from .conic import HermitianBlockHandle, SdpProblem, SdpSolution, SolveOptions, solve_sdp
from .metrics import BeamformingSolution, cu_channel, target_channel

_W_TO_MW = 1e3


class DegenerateCuError(ValueError):
    """A CU receives (numerically) no power; rank-one recovery is undefined."""


@dataclass
class BsStageContext:
    """Constants of one BS-stage subproblem instance."""

    h_cu: np.ndarray           # (K, M) equivalent BS->CU channels
    h_tar: np.ndarray          # (L, M) cascaded BS->target channels
    b: np.ndarray              # (K,) RIS-noise-plus-receiver-noise constants (W)
    ris_power_map: np.ndarray  # (M, M) map R -> active-element output power
    frob_const: float          # injected active-noise output power (W)
    rho_unit: float            # value of one scaled-objective unit (W)
    layout: dict = field(default_factory=dict, repr=False)


def _scaled_row(idx, coef, rhs):
    s = max(float(np.max(np.abs(coef), initial=0.0)), abs(rhs), 1e-300)
    return idx, np.asarray(coef) / s, rhs / s


def build_bs_sdp(cfg: SystemConfig, ch: ChannelSet, ris: RisConfiguration):
    """Assemble the relaxed BS-stage SDP.

    Returns (problem, context). The problem has exactly L + 1 + K + 1
    constraints: per-target gain bounds, BS power, per-CU SINR in trace
    form, and RIS output power with the noise constant folded into the
    right-hand side.
    """
    ris.validate(cfg.beta_max)
    K, L, M = cfg.K, cfg.L, cfg.M
    h_cu = np.stack([cu_channel(ch, ris, k) for k in range(K)]) if K else \
        np.zeros((0, M), dtype=complex)
    h_tar = np.stack([target_channel(ch, ris, l) for l in range(L)])
    gains = ris.q * ris.beta**2
    b = np.array([
        cfg.sigma2_ris * float(np.sum(np.abs(ch.h_iu[k]) ** 2 * gains))
        + cfg.sigma2_cu[k]
        for k in range(K)
    ])
    ris_power_map = (ch.G * gains) @ ch.G.conj().T
    ris_power_map = (ris_power_map + ris_power_map.conj().T) / 2
    frob_const = cfg.sigma2_ris * float(np.sum(gains))

    p = SdpProblem()
    w_blocks = [HermitianBlockHandle(p, M) for _ in range(K)]
    r0_block = HermitianBlockHandle(p, M)
    rho = p.add_free(1)

    p0_mw = cfg.P0 * _W_TO_MW
    g0 = max(float(np.max(np.sum(np.abs(h_tar) ** 2, axis=1))), 1e-300)
    rho_unit = g0 * p0_mw / _W_TO_MW  # watts per unit of the scaled objective

    def all_blocks_trace(Amat):
        ids, coefs = r0_block.trace_coeffs(Amat)
        parts_i, parts_c = [ids], [coefs]
        for wb in w_blocks:
            i2, c2 = wb.trace_coeffs(Amat)
            parts_i.append(i2)
            parts_c.append(c2)
        return np.concatenate(parts_i), np.concatenate(parts_c)

    # Per-target gain lower bounds: tr(R h_l h_l^H) >= rho.
    for l in range(L):
        H = np.outer(h_tar[l], h_tar[l].conj()) / (g0 * p0_mw)
        ids, coefs = all_blocks_trace(H)
        idx = np.concatenate([ids, [rho]])
        cf = np.concatenate([coefs, [-1.0]])
        idx, cf, rhs = _scaled_row(idx, cf, 0.0)
        p.add_constraint(idx, cf, ">=", rhs, name=f"target_gain[{l}]")

    # BS power budget.
    ids, coefs = all_blocks_trace(np.eye(M) / p0_mw)
    p.add_constraint(ids, coefs, "<=", 1.0, name="bs_power")

    # Per-CU SINR in trace form.
    for k in range(K):
        Hck = np.outer(h_cu[k], h_cu[k].conj())
        parts_i, parts_c = [], []
        for j in range(K):
            w_coef = 1.0 / cfg.Gamma[k] if j == k else -1.0
            i2, c2 = w_blocks[j].trace_coeffs(Hck)
            parts_i.append(i2)
            parts_c.append(w_coef * c2)
        idx, cf, rhs = _scaled_row(np.concatenate(parts_i),
                                   np.concatenate(parts_c), b[k] * _W_TO_MW)
        p.add_constraint(idx, cf, ">=", rhs, name=f"cu_sinr[{k}]")

    # RIS output power with the Frobenius noise term folded into the rhs.
    ids, coefs = all_blocks_trace(ris_power_map)
    idx, cf, rhs = _scaled_row(ids, coefs,
                               (cfg.P_ris_max - frob_const) * _W_TO_MW)
    p.add_constraint(idx, cf, "<=", rhs, name="ris_power")

    p.set_objective([rho], [1.0])
    ctx = BsStageContext(
        h_cu=h_cu, h_tar=h_tar, b=b, ris_power_map=ris_power_map,
        frob_const=frob_const, rho_unit=rho_unit,
        layout={"w_blocks": w_blocks, "r0_block": r0_block, "rho": rho},
    )
    return p, ctx


@dataclass
class BsStageResult:
    status: str
    W_star: np.ndarray | None       # (K, M, M) relaxed beamformer Grams (W)
    R0_star: np.ndarray | None      # (M, M) relaxed sensing covariance (W)
    rho_prime: float                # min target gain of the relaxed solution (W)
    solution: SdpSolution | None = None


def solve_bs_stage(
    cfg: SystemConfig, ch: ChannelSet, ris: RisConfiguration,
    opts: SolveOptions | None = None,
) -> tuple[BsStageResult, BsStageContext]:
    """Solve the relaxed BS-stage SDP; non-optimal statuses are propagated."""
    problem, ctx = build_bs_sdp(cfg, ch, ris)
    sol = solve_sdp(problem, opts or SolveOptions(tol=1e-7))
    if sol.status != "optimal":
        return BsStageResult(sol.status, None, None, float("nan"), sol), ctx
    W = np.stack([
        wb.extract(sol) / _W_TO_MW for wb in ctx.layout["w_blocks"]
    ]) if cfg.K else np.zeros((0, cfg.M, cfg.M), dtype=complex)
    R0 = ctx.layout["r0_block"].extract(sol) / _W_TO_MW
    R = R0 + W.sum(axis=0)
    rho_prime = min(
        float(np.real(ctx.h_tar[l].conj() @ R @ ctx.h_tar[l]))
        for l in range(cfg.L)
    )
    return BsStageResult("optimal", W, R0, rho_prime, sol), ctx


def rank_one_construct(
    W_star: np.ndarray, R0_star: np.ndarray, h_cu: np.ndarray,
) -> BeamformingSolution:
    """Closed-form rank-one-feasible beamformers from the relaxed solution.

    w_k = W_k h_k / sqrt(h_k^H W_k h_k) and the sensing covariance absorbs
    the residual so the total covariance (hence objective, powers, and
    every SINR) is preserved exactly.
    """
    K = W_star.shape[0] if W_star is not None and W_star.ndim == 3 else 0
    M = R0_star.shape[0]
    if K == 0:
        return BeamformingSolution(w=np.zeros((0, M), dtype=complex),
                                   R0=R0_star.copy())
    w = np.zeros((K, M), dtype=complex)
    for k in range(K):
        Wk = (W_star[k] + W_star[k].conj().T) / 2
        p_k = float(np.real(h_cu[k].conj() @ Wk @ h_cu[k]))
        scale = max(float(np.real(np.trace(Wk))) * float(np.sum(np.abs(h_cu[k]) ** 2)),
                    1e-300)
        if p_k <= 1e-12 * scale:
            raise DegenerateCuError(
                f"CU {k} receives no power (h^H W h = {p_k:.3e})")
        w[k] = (Wk @ h_cu[k]) / np.sqrt(p_k)
    R0 = R0_star + W_star.sum(axis=0) - w.T @ w.conj()
    R0 = (R0 + R0.conj().T) / 2
    return BeamformingSolution(w=w, R0=R0)
