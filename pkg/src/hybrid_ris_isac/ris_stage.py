"""RIS stage: joint relaxed mode selection and reflection optimization.

With the beamformers held fixed, the reflection coefficients are lifted to
a rank-relaxed PSD matrix V over the vector [phi_1 ... phi_N, 1]; an
auxiliary Hermitian matrix Z is tied to the mode-gated block of V through
double-sided big-M constraints so that active-element power and noise
terms become linear; the binary mode vector is box-relaxed and driven
toward {0, 1} by a linearized concave penalty. A feasible configuration is
then recovered by rounding plus Gaussian randomization audited against the
exact evaluators in :mod:`metrics`.

For frozen-mode runs (baseline schemes) Z is eliminated algebraically
(Z = Q V Q), which removes the big-M rows entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import ChannelSet, RisConfiguration, wrap_phase
from .config import SystemConfig
from .conic import HermitianBlockHandle, SdpProblem, SdpSolution, SolveOptions, solve_sdp
from .metrics import (
    BeamformingSolution,
    beampattern_gain,
    cu_sinr,
    ris_noise_at_target,
    ris_output_power,
)


def bigm_constant(cfg: SystemConfig) -> float:
    """Big-M bound on |V_ij|: V PSD with unit corner and V_nn <= beta_max^2."""
    return cfg.beta_max**2


def binarity_penalty(q: np.ndarray) -> float:
    """sum_n q_n (1 - q_n); zero exactly on binary vectors."""
    q = np.asarray(q, dtype=float)
    return float(np.sum(q * (1.0 - q)))


def majorized_binarity_penalty(q: np.ndarray, q_prev: np.ndarray) -> float:
    """Convex (linear) majorant of the binarity penalty, tangent at q_prev."""
    q = np.asarray(q, dtype=float)
    q_prev = np.asarray(q_prev, dtype=float)
    return float(np.sum(q - q_prev**2 - 2.0 * q_prev * (q - q_prev)))


def binarity_gap(q: np.ndarray) -> float:
    """max_n min(q_n, 1 - q_n): distance of the relaxed modes from binary."""
    q = np.asarray(q, dtype=float)
    return float(np.max(np.minimum(q, 1.0 - q), initial=0.0))


@dataclass
class RisStageMatrices:
    """Lifted constant matrices of one RIS-stage instance (all SI units)."""

    rbar_tar: np.ndarray        # (L, N+1, N+1) target-gain quadratic forms
    rbar_cu: np.ndarray         # (K, K, N+1, N+1) CU cross-power forms
    p_ris: np.ndarray           # (N, N) RIS receive-covariance + noise
    sigma_ris_diag: np.ndarray  # (K, N) diagonal of the CU RIS-noise forms
    p_tar_diag: np.ndarray      # (L, N) diagonal of the target-noise forms
    c: np.ndarray               # (K,) SINR right-hand constants
    r_total: np.ndarray         # (M, M) fixed total transmit covariance


def build_ris_matrices(
    cfg: SystemConfig, ch: ChannelSet, bf: BeamformingSolution
) -> RisStageMatrices:
    """Assemble the lifted constant matrices for fixed beamformers.

    The target forms are built so that for any v with unit last entry,
    v^H rbar_tar[l] v equals the true beampattern gain at the reflection
    state phi = v[:N]; likewise the CU forms reproduce |h_cu^H w_j|^2 up
    to the direct-path constant.
    """
    N, K, L = cfg.N, cfg.K, cfg.L
    R = bf.total_covariance
    k_mat = ch.G.conj().T @ R @ ch.G           # (N, N) Hermitian
    k_mat = (k_mat + k_mat.conj().T) / 2

    rbar_tar = np.zeros((L, N + 1, N + 1), dtype=complex)
    for l in range(L):
        a = ch.a_tar[l]
        m = (a[:, None] * k_mat.conj()) * a.conj()[None, :]
        rbar_tar[l, :N, :N] = (m + m.conj().T) / 2

    rbar_cu = np.zeros((K, K, N + 1, N + 1), dtype=complex)
    c = np.zeros(K)
    for k in range(K):
        A_k = ch.G * ch.h_iu[k][None, :]        # (M, N)
        for j in range(K):
            u = A_k.conj().T @ bf.w[j]          # (N,)
            c_kj = ch.h_bu[k].conj() @ bf.w[j]  # h_bu^H w_j
            rbar_cu[k, j, :N, :N] = np.outer(u, u.conj())
            rbar_cu[k, j, :N, N] = np.conj(c_kj) * u
            rbar_cu[k, j, N, :N] = c_kj * u.conj()
        direct = np.abs(ch.h_bu[k].conj() @ bf.w.T) ** 2 if K else np.zeros(0)
        c[k] = (float(np.sum(direct) - direct[k])
                - direct[k] / cfg.Gamma[k] + cfg.sigma2_cu[k])

    p_ris = k_mat + cfg.sigma2_ris * np.eye(N)
    sigma_ris_diag = cfg.sigma2_ris * np.abs(ch.h_iu) ** 2
    p_tar_diag = cfg.sigma2_ris * np.abs(ch.a_tar) ** 2
    return RisStageMatrices(
        rbar_tar=rbar_tar, rbar_cu=rbar_cu, p_ris=p_ris,
        sigma_ris_diag=sigma_ris_diag, p_tar_diag=p_tar_diag, c=c, r_total=R,
    )


@dataclass
class RisSdpLayout:
    """Handles and index maps of one built RIS-stage SDP."""

    v_block: HermitianBlockHandle
    rho: int
    rho_unit: float
    phi_scale: float = 1.0      # solver variable is phi / phi_scale
    q_base: int | None = None
    z_base: int | None = None
    n: int = 0
    q_fixed: np.ndarray | None = None


def _z_ids(layout: RisSdpLayout):
    """(diag ids, offdiag-re ids, offdiag-im ids) of the Z parameterization."""
    N = layout.n
    npairs = N * (N - 1) // 2
    zb = layout.z_base
    return (zb + np.arange(N),
            zb + N + np.arange(npairs),
            zb + N + npairs + np.arange(npairs))


def _sinr_matrix(cfg: SystemConfig, mats: RisStageMatrices, k: int) -> np.ndarray:
    m = mats.rbar_cu[k, k] / cfg.Gamma[k]
    for j in range(cfg.K):
        if j != k:
            m = m - mats.rbar_cu[k, j]
    return m


def build_ris_sdp(
    cfg: SystemConfig,
    mats: RisStageMatrices,
    q_prev: np.ndarray | None,
    mu: float,
    q_fixed: np.ndarray | None = None,
    q_upper: np.ndarray | None = None,
) -> tuple[SdpProblem, RisSdpLayout]:
    """Assemble the RIS-stage SDP.

    Relaxed form (``q_fixed`` is None): variables are the lifted PSD matrix
    V, the Hermitian coupling matrix Z (free entries, big-M bounded), the
    box-relaxed mode vector q, and the gain level; the objective is the
    gain level minus ``mu`` times the linearized binarity penalty around
    ``q_prev``. Frozen form: q is a constant binary vector, Z is
    substituted by Q V Q, and the penalty and box rows are dropped.

    The solver variable is the lifted matrix of [phi / beta_max, 1]: a PSD
    cone can only be equilibrated by a uniform scalar, so homogenizing the
    entries structurally (amplitude caps become 1, the big-M constant
    becomes 1) is essential for conditioning. The physical V and Z are
    restored on extraction.
    """
    N, K, L = cfg.N, cfg.K, cfg.L
    p = SdpProblem()
    v = HermitianBlockHandle(p, N + 1)
    s = cfg.beta_max
    s2 = s * s
    dvec = np.concatenate([np.full(N, s), [1.0]])
    dd = np.outer(dvec, dvec)        # lifted-matrix scaling V = dd * V_solver
    rho_unit = max(
        float(np.max(np.abs(np.trace(mats.rbar_tar, axis1=1, axis2=2)))), 1e-300
    ) * s2
    layout = RisSdpLayout(v_block=v, rho=-1, rho_unit=rho_unit, phi_scale=s,
                          n=N)

    def tar_scaled(l):
        return mats.rbar_tar[l] * dd

    if q_fixed is not None:
        q_fixed = np.asarray(q_fixed, dtype=float)
        layout.q_fixed = q_fixed
        rho = p.add_free(1)
        layout.rho = rho
        _add_v_corner_row(p, v, N)
        _add_gain_rows(p, v, [tar_scaled(l) for l in range(L)], rho, rho_unit)
        for k in range(K):
            m = _sinr_matrix(cfg, mats, k).copy()
            m[:N, :N] -= np.diag(q_fixed * mats.sigma_ris_diag[k])
            ids, cf = v.trace_coeffs(m * dd)
            ids, cf, rhs = _scaled(ids, cf, mats.c[k])
            p.add_constraint(ids, cf, ">=", rhs, name=f"cu_sinr[{k}]")
        if np.any(q_fixed > 0):
            # Exact per-element output power: sum_n q_n (P_ris)_nn V_nn.
            pq_diag = np.zeros((N + 1, N + 1), dtype=complex)
            pq_diag[:N, :N] = np.diag(q_fixed * np.real(np.diag(mats.p_ris)) * s2)
            ids, cf = v.trace_coeffs(pq_diag)
            ids, cf, rhs = _scaled(ids, cf, cfg.P_ris_max)
            p.add_constraint(ids, cf, "<=", rhs, name="ris_power")
            for l in range(L):
                noise = np.zeros((N + 1, N + 1), dtype=complex)
                noise[:N, :N] = np.diag(q_fixed * mats.p_tar_diag[l] * s2)
                ids, cf = v.trace_coeffs(noise)
                ids, cf, rhs = _scaled(ids, cf, cfg.xi_ris_max)
                p.add_constraint(ids, cf, "<=", rhs, name=f"ris_noise[{l}]")
        for n in range(N):
            ids, cf = v.entry_coeffs(n, n, "re")
            if q_fixed[n] == 0:
                p.add_constraint(ids, cf, "==", 1.0 / s2,
                                 name=f"passive_amp[{n}]")
            else:
                p.add_constraint(ids, cf, "<=", 1.0, name=f"amp_cap[{n}]")
        p.set_objective([rho], [1.0])
        return p, layout

    # Relaxed joint form.
    q_prev = np.asarray(q_prev, dtype=float)
    q_base = p.add_nonneg(N)
    npairs = N * (N - 1) // 2
    free = p.add_free(1 + N + 2 * npairs)
    rho = free
    layout.rho = rho
    layout.q_base = q_base
    layout.z_base = free + 1
    zd, zre, zim = _z_ids(layout)

    _add_v_corner_row(p, v, N)
    _add_gain_rows(p, v, [tar_scaled(l) for l in range(L)], rho, rho_unit)

    for k in range(K):
        ids, cf = v.trace_coeffs(_sinr_matrix(cfg, mats, k) * dd)
        idx = np.concatenate([ids, zd])
        coefs = np.concatenate([cf, -mats.sigma_ris_diag[k] * s2])
        idx, coefs, rhs = _scaled(idx, coefs, mats.c[k])
        p.add_constraint(idx, coefs, ">=", rhs, name=f"cu_sinr[{k}]")

    iu, ju = np.triu_indices(N, k=1)
    # Output power budget on the active elements, exact at every binary
    # mode vector: sum_n (P_ris)_nn Z_nn.
    pr_diag = np.real(np.diag(mats.p_ris)) * s2
    idx, coefs, rhs = _scaled(zd, pr_diag, cfg.P_ris_max)
    p.add_constraint(idx, coefs, "<=", rhs, name="ris_power")
    for l in range(L):
        idx, coefs, rhs = _scaled(zd, mats.p_tar_diag[l] * s2, cfg.xi_ris_max)
        p.add_constraint(idx, coefs, "<=", rhs, name=f"ris_noise[{l}]")

    # Big-M coupling of Z to the mode-gated block of V, entrywise on the
    # real and imaginary parts, plus the amplitude re-expression rows.
    # In the scaled variables the big-M constant is exactly 1.
    for n in range(N):
        vids, vcf = v.entry_coeffs(n, n, "re")
        qn = q_base + n
        _bigm_rows(p, zd[n], vids, vcf, (qn,), 1.0, f"z[{n},{n}]")
        p.add_constraint(np.concatenate([vids, [zd[n], qn]]),
                         np.concatenate([vcf, [-1.0, 1.0 / s2]]),
                         "==", 1.0 / s2, name=f"amp_link[{n}]")
        p.add_constraint(vids, vcf, "<=", 1.0, name=f"amp_cap[{n}]")
        p.add_constraint([qn], [1.0], "<=",
                         1.0 if q_upper is None else float(q_upper[n]),
                         name=f"mode_box[{n}]")
    for pair in range(npairs):
        i, j = int(iu[pair]), int(ju[pair])
        for part, zid in (("re", zre[pair]), ("im", zim[pair])):
            vids, vcf = v.entry_coeffs(i, j, part)
            _bigm_rows(p, zid, vids, vcf, (q_base + i, q_base + j), 1.0,
                       f"z[{i},{j}].{part}")

    _set_relaxed_objective(p, layout, q_prev, mu)
    return p, layout


def _scaled(idx, coef, rhs):
    s = max(float(np.max(np.abs(coef), initial=0.0)), abs(rhs), 1e-300)
    return np.asarray(idx), np.asarray(coef) / s, rhs / s


def _add_v_corner_row(p: SdpProblem, v: HermitianBlockHandle, N: int) -> None:
    ids, cf = v.entry_coeffs(N, N, "re")
    p.add_constraint(ids, cf, "==", 1.0, name="v_corner")


def _add_gain_rows(p, v, scaled_tar_mats, rho, rho_unit) -> None:
    for l, m in enumerate(scaled_tar_mats):
        ids, cf = v.trace_coeffs(m)
        idx = np.concatenate([ids, [rho]])
        coefs = np.concatenate([cf, [-rho_unit]])
        idx, coefs, rhs = _scaled(idx, coefs, 0.0)
        p.add_constraint(idx, coefs, ">=", rhs, name=f"target_gain[{l}]")


def _bigm_rows(p, zid, vids, vcf, q_ids, cap, tag) -> None:
    """|z| <= q*cap and |z - V_part| <= (1-q)*cap for each gating q."""
    for qn in q_ids:
        p.add_constraint([zid, qn], [1.0 / cap, -1.0], "<=", 0.0,
                         name=f"{tag}<=q")
        p.add_constraint([zid, qn], [-1.0 / cap, -1.0], "<=", 0.0,
                         name=f"{tag}>=-q")
        p.add_constraint(np.concatenate([[zid], vids, [qn]]),
                         np.concatenate([[1.0 / cap], -vcf / cap, [1.0]]),
                         "<=", 1.0, name=f"{tag}-V<=")
        p.add_constraint(np.concatenate([[zid], vids, [qn]]),
                         np.concatenate([[-1.0 / cap], vcf / cap, [1.0]]),
                         "<=", 1.0, name=f"{tag}-V>=")


def _set_relaxed_objective(p: SdpProblem, layout: RisSdpLayout,
                           q_prev: np.ndarray, mu: float) -> None:
    N = layout.n
    q_ids = layout.q_base + np.arange(N)
    idx = np.concatenate([[layout.rho], q_ids])
    coefs = np.concatenate([[1.0],
                            -(mu / layout.rho_unit) * (1.0 - 2.0 * q_prev)])
    keep = coefs != 0.0
    p.set_objective(idx[keep], coefs[keep])


def update_sca_objective(p: SdpProblem, layout: RisSdpLayout,
                         q_prev: np.ndarray, mu: float) -> None:
    """Re-point the penalty linearization without rebuilding constraints."""
    _set_relaxed_objective(p, layout, np.asarray(q_prev, dtype=float), mu)


@dataclass
class RisStageSolution:
    """Relaxed RIS-stage solution in physical units."""

    status: str
    rho_dd: float                  # relaxed min target gain (W)
    V: np.ndarray | None           # (N+1, N+1) Hermitian
    Z: np.ndarray | None           # (N, N) Hermitian
    q: np.ndarray | None           # (N,) in [0, 1]
    gap: float = float("nan")      # binarity gap of q
    invariant_violation: float = float("nan")
    solution: SdpSolution | None = None


def extract_ris_solution(
    cfg: SystemConfig, mats: RisStageMatrices, layout: RisSdpLayout,
    sol: SdpSolution,
) -> RisStageSolution:
    if sol.status not in ("optimal", "numerical_failure") or sol.raw is None \
            or not sol.psd_values:
        return RisStageSolution(sol.status, float("nan"), None, None, None,
                                solution=sol)
    N = layout.n
    s = layout.phi_scale
    dvec = np.concatenate([np.full(N, s), [1.0]])
    V = layout.v_block.extract(sol) * np.outer(dvec, dvec)
    if layout.q_fixed is not None:
        q = layout.q_fixed.copy()
        Z = (q[:, None] * V[:N, :N]) * q[None, :]
    else:
        q = sol.nonneg_values[:N].copy()
        fv = sol.free_values * (s * s)
        base = layout.z_base - layout.rho  # offset of z within the free vector
        Z = np.zeros((N, N), dtype=complex)
        iu, ju = np.triu_indices(N, k=1)
        Z[np.arange(N), np.arange(N)] = fv[base:base + N]
        off = fv[base + N:base + N + iu.size] + 1j * fv[base + N + iu.size:]
        Z[iu, ju] = off
        Z[ju, iu] = off.conj()
    rho_dd = min(
        float(np.real(np.trace(mats.rbar_tar[l] @ V)))
        for l in range(mats.rbar_tar.shape[0])
    )
    viol = max(
        abs(float(np.real(V[N, N])) - 1.0),
        float(np.max(np.real(np.diag(V)[:N]) - bigm_constant(cfg), initial=0.0)),
        float(np.max(np.abs(np.real(np.diag(V)[:N] - np.diag(Z))
                            - (1.0 - q)), initial=0.0)),
    )
    return RisStageSolution(
        status=sol.status, rho_dd=rho_dd, V=V, Z=Z, q=q,
        gap=binarity_gap(q) if layout.q_fixed is None else 0.0,
        invariant_violation=viol, solution=sol,
    )


def solve_ris_stage(
    cfg: SystemConfig,
    mats: RisStageMatrices,
    q_prev: np.ndarray | None,
    mu: float,
    q_fixed: np.ndarray | None = None,
    q_upper: np.ndarray | None = None,
    opts: SolveOptions | None = None,
) -> RisStageSolution:
    """Build and solve one RIS-stage SDP instance."""
    p, layout = build_ris_sdp(cfg, mats, q_prev, mu, q_fixed=q_fixed,
                              q_upper=q_upper)
    sol = solve_sdp(p, opts or SolveOptions(tol=1e-6))
    return extract_ris_solution(cfg, mats, layout, sol)


def round_modes(q_relaxed: np.ndarray) -> tuple[np.ndarray, float]:
    """Threshold the relaxed modes at 0.5 (ties round to active).

    Returns the binary vector and the binarity gap max_n min(q, 1-q).
    """
    q = np.asarray(q_relaxed, dtype=float)
    return (q >= 0.5).astype(float), binarity_gap(q)


@dataclass
class RandomizationDiagnostics:
    binarity_gap: float
    v_rank_one: bool
    n_samples: int
    n_discarded: int
    n_feasible: int
    selected_objective: float
    lifting_mismatch: float


def _project_candidates(phi: np.ndarray, q_hat: np.ndarray, beta_max: float):
    amp = np.abs(phi)
    ang = np.angle(phi)
    amp = np.where(q_hat[None, :] == 0, 1.0, np.minimum(amp, beta_max))
    return amp * np.exp(1j * ang), amp, wrap_phase(ang)


def gaussian_randomize(
    V_star: np.ndarray,
    q_hat: np.ndarray,
    mats: RisStageMatrices,
    cfg: SystemConfig,
    ch: ChannelSet,
    bf: BeamformingSolution,
    n_samples: int,
    seed: int,
    _force_sampling: bool = False,
) -> tuple[RisConfiguration | None, RandomizationDiagnostics]:
    """Recover a feasible reflection state from the relaxed covariance V.

    Samples are drawn from CN(0, V), normalized to unit last entry,
    projected onto the feasible reflection set implied by the rounded
    modes, screened against the SINR / RIS power / RIS noise constraints,
    and the feasible candidate with the largest minimum target gain is
    returned after re-verification through the exact metric evaluators.
    If V is (numerically) rank one its leading eigenvector is used
    directly. Returns (None, diagnostics) when no candidate survives.
    """
    N = cfg.N
    q_hat = np.asarray(q_hat, dtype=float)
    V = (V_star + V_star.conj().T) / 2
    lam, U = np.linalg.eigh(V)
    lam = np.clip(lam, 0.0, None)
    rank_one = (not _force_sampling
                and (lam[-2] <= 1e-7 * lam[-1] if lam.size > 1 else True))

    n_discarded = 0
    if rank_one and abs(U[N, -1]) * np.sqrt(lam[-1]) > 1e-9:
        lead = U[:, -1] * np.sqrt(lam[-1])
        raw = (lead / lead[N])[None, :N]
    else:
        rank_one = False
        rng = np.random.default_rng(seed)
        xi = (rng.standard_normal((n_samples, N + 1))
              + 1j * rng.standard_normal((n_samples, N + 1))) / np.sqrt(2.0)
        samples = (xi * np.sqrt(lam)[None, :]) @ U.T
        last = samples[:, N]
        keep = np.abs(last) >= 1e-9
        n_discarded = int(np.sum(~keep))
        raw = samples[keep, :N] / last[keep, None]

    phi, amp, theta = _project_candidates(raw, q_hat, cfg.beta_max)
    S = phi.shape[0]
    tol = cfg.tol_feas

    # Vectorized feasibility screen (mirrors the metric evaluators).
    act_gain = amp**2 * q_hat[None, :]
    k_diag = np.real(np.einsum("mn,mp,pn->n", ch.G.conj(), mats.r_total, ch.G))
    ris_pow = act_gain @ (k_diag + cfg.sigma2_ris)
    feasible = ris_pow <= cfg.P_ris_max * (1.0 + tol)
    for l in range(cfg.L):
        xi_l = act_gain @ (np.abs(ch.a_tar[l]) ** 2) * cfg.sigma2_ris
        feasible &= xi_l <= cfg.xi_ris_max * (1.0 + tol)
    h_cu_all = np.empty((cfg.K, S, cfg.M), dtype=complex)
    for k in range(cfg.K):
        h_cu_all[k] = (phi * ch.h_iu[k][None, :]) @ ch.G.T + ch.h_bu[k][None, :]
    for k in range(cfg.K):
        gains = np.abs(h_cu_all[k] @ bf.w.conj().T) ** 2  # (S, K)
        noise = (act_gain @ (np.abs(ch.h_iu[k]) ** 2)) * cfg.sigma2_ris
        den = gains.sum(axis=1) - gains[:, k] + noise + cfg.sigma2_cu[k]
        feasible &= gains[:, k] >= cfg.Gamma[k] * den * (1.0 - tol)

    # Scores: minimum lifted target gain.
    vfull = np.concatenate([phi, np.ones((S, 1))], axis=1)
    scores = np.full(S, np.inf)
    for l in range(cfg.L):
        g = np.real(np.einsum("sp,sp->s", vfull.conj(),
                              vfull @ mats.rbar_tar[l].T))
        scores = np.minimum(scores, g)

    diag = RandomizationDiagnostics(
        binarity_gap=float("nan"), v_rank_one=rank_one, n_samples=S,
        n_discarded=n_discarded, n_feasible=int(np.sum(feasible)),
        selected_objective=float("nan"), lifting_mismatch=float("nan"),
    )
    selected = None
    if np.any(feasible):
        order = np.flatnonzero(feasible)
        order = order[np.argsort(-scores[order], kind="stable")]
        for idx in order:
            beta = np.where(q_hat == 0, 1.0, amp[idx])
            cand = RisConfiguration(q=q_hat.copy(), beta=beta, theta=theta[idx])
            ok = ris_output_power(ch, cand, bf, cfg) <= cfg.P_ris_max * (1 + tol)
            for l in range(cfg.L):
                ok &= (ris_noise_at_target(cand, ch, l, cfg)
                       <= cfg.xi_ris_max * (1 + tol))
            for k in range(cfg.K):
                ok &= cu_sinr(ch, cand, bf, k, cfg) >= cfg.Gamma[k] * (1 - tol)
            if ok:
                exact = min(beampattern_gain(ch, cand, bf, l)
                            for l in range(cfg.L))
                diag.selected_objective = exact
                diag.lifting_mismatch = abs(exact - scores[idx]) / max(exact, 1e-300)
                selected = cand
                break
    if selected is None and rank_one:
        # The eigenvector candidate failed the audit; sample instead.
        return gaussian_randomize(V_star, q_hat, mats, cfg, ch, bf,
                                  n_samples, seed, _force_sampling=True)
    return selected, diag
