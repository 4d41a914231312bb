"""Batch experiment harness: seeded sweeps, beampattern maps, and the
small-instance enumeration oracle.

Sweep trials share channel realizations point-wise across schemes (trial t
uses seed ``seed_base + t``); rows are emitted in a fixed order by (grid
index, trial, scheme) regardless of worker completion order, so result
CSVs are reproducible run to run.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bs_stage import rank_one_construct, solve_bs_stage
from .channels import RisConfiguration, generate_channels
from .config import SystemConfig, dbm_to_watts, db_to_linear
from .metrics import BeamformingSolution, audit
from .optimizer import RunOptions, run_scheme, save_trace

SWEEP_COLUMNS = ("param", "value", "trial", "seed", "scheme", "objective_w",
                 "converged", "iterations", "active_count", "wall_time_s")

SWEEPABLE = ("N", "P_ris_max", "Gamma", "M", "L")


def apply_param(cfg: SystemConfig, param: str, value: float) -> SystemConfig:
    """Derive a scenario with one swept parameter changed.

    Units follow the figure axes: N/M/L are counts (N must be a perfect
    square, split into a square grid), P_ris_max is in dBm, Gamma in dB.
    """
    if param == "N":
        side = int(round(np.sqrt(value)))
        if side * side != int(value):
            raise ValueError("swept N must be a perfect square")
        return cfg.replace(Nx=side, Ny=side)
    if param == "P_ris_max":
        return cfg.replace(P_ris_max=float(dbm_to_watts(value)))
    if param == "Gamma":
        return cfg.replace(Gamma=np.full(cfg.K, db_to_linear(value)))
    if param == "M":
        return cfg.replace(M=int(value))
    if param == "L":
        return cfg.replace(L=int(value), target_angles=None)
    raise ValueError(f"unknown sweep parameter {param!r}")


@dataclass
class SweepSpec:
    base_config: SystemConfig
    param: str
    grid: list
    trials: int
    schemes: list = field(default_factory=lambda: ["proposed"])
    seed_base: int = 0
    n_active: int = 12
    run_options: RunOptions | None = None
    out_dir: str | None = None
    workers: int | None = None

    def validate(self) -> None:
        if not self.grid:
            raise ValueError("sweep grid must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.param not in SWEEPABLE:
            raise ValueError(f"param must be one of {SWEEPABLE}")


def _sweep_job(args):
    (base_cfg_dict, param, value, trial, seed, scheme, n_active,
     opts_dict, out_dir) = args
    from .config import config_from_dict

    t0 = time.time()
    try:
        cfg = apply_param(config_from_dict(base_cfg_dict), param, value)
        ch = generate_channels(cfg, seed)
        opts = RunOptions(**opts_dict)
        opts.seed = seed
        trace = run_scheme(scheme, cfg, ch, opts, n_active=n_active)
        if out_dir:
            fname = f"{param}_{value:g}_{scheme.replace('(', '_').rstrip(')')}_t{trial}.json"
            save_trace(trace, os.path.join(out_dir, fname))
        return {
            "param": param, "value": value, "trial": trial, "seed": seed,
            "scheme": trace.scheme, "objective_w": trace.objective,
            "converged": trace.converged, "iterations": trace.n_outer,
            "active_count": trace.ris.n_active if trace.ris is not None else -1,
            "wall_time_s": round(time.time() - t0, 3),
        }
    except Exception as exc:  # individual failures become rows, never aborts
        return {
            "param": param, "value": value, "trial": trial, "seed": seed,
            "scheme": scheme, "objective_w": float("nan"), "converged": False,
            "iterations": 0, "active_count": -1,
            "wall_time_s": round(time.time() - t0, 3), "error": str(exc)[:200],
        }


def run_sweep(spec: SweepSpec) -> list:
    """Execute the sweep; returns rows ordered by (grid index, trial, scheme)."""
    spec.validate()
    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
    opts = spec.run_options or RunOptions()
    opts_dict = {k: getattr(opts, k) for k in vars(opts)}
    jobs = []
    for value in spec.grid:
        for trial in range(spec.trials):
            seed = spec.seed_base + trial
            for scheme in spec.schemes:
                jobs.append((spec.base_config.to_dict(), spec.param, value,
                             trial, seed, scheme, spec.n_active, opts_dict,
                             spec.out_dir))
    workers = spec.workers or min(os.cpu_count() or 1, len(jobs))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    if spec.out_dir:
        write_sweep_csv(rows, os.path.join(spec.out_dir, "sweep.csv"))
    return rows


def write_sweep_csv(rows: list, path: str) -> None:
    """RFC-4180 CSV with the fixed documented column order."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in SWEEP_COLUMNS])


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def beampattern_grid(
    cfg: SystemConfig, ch, bf: BeamformingSolution, ris: RisConfiguration,
    grid_res: int = 91,
):
    """Normalized beampattern over an (azimuth x elevation) grid.

    Returns (azimuth axis, elevation axis, gains) with the gain matrix
    normalized by its maximum; gains[i, j] is the gain toward
    (azimuth[i], elevation[j]).
    """
    az = np.linspace(-np.pi / 2, np.pi / 2, grid_res)
    el = np.linspace(-np.pi / 2, np.pi / 2, grid_res)
    AZ, EL = np.meshgrid(az, el, indexing="ij")
    ux = (np.sin(AZ) * np.cos(EL)).ravel()
    uy = (np.sin(AZ) * np.sin(EL)).ravel()
    kx = 2 * np.pi * cfg.dx / cfg.wavelength
    ky = 2 * np.pi * cfg.dy / cfg.wavelength
    ax = np.exp(1j * kx * np.outer(ux, np.arange(cfg.Nx)))
    ay = np.exp(1j * ky * np.outer(uy, np.arange(cfg.Ny)))
    steer = np.einsum("gi,gj->gij", ax, ay).reshape(len(ux), cfg.N)
    S = np.conj(ris.phi)[None, :] * steer
    H = S @ ch.G.T                               # (grid^2, M)
    R = bf.total_covariance
    gains = np.real(np.einsum("gm,gm->g", H.conj(), H @ R.T))
    gains = gains.reshape(grid_res, grid_res)
    return az, el, gains / max(float(gains.max()), 1e-300)


def write_beampattern_csv(az, el, gains, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("azimuth_rad", "elevation_rad", "gain_normalized"))
        for i in range(len(az)):
            for j in range(len(el)):
                w.writerow([repr(float(az[i])), repr(float(el[j])),
                            repr(float(gains[i, j]))])


def find_local_maxima(gains: np.ndarray, top: int = 2):
    """(i, j, value) of the strongest local maxima (8-neighborhood)."""
    from scipy.ndimage import maximum_filter

    local = (gains == maximum_filter(gains, size=3, mode="nearest"))
    idx = np.argwhere(local)
    vals = gains[local]
    order = np.argsort(-vals)
    return [(int(idx[k][0]), int(idx[k][1]), float(vals[order[k]]))
            for k in order[:top]] if len(vals) else []


def active_ratio_sweep(cfg: SystemConfig, p_ris_grid_dbm: list, trials: int,
                       seed_base: int = 0, run_options: RunOptions | None = None,
                       workers: int | None = None, out_dir: str | None = None):
    """Mean active-element count and active-to-passive ratio per budget."""
    spec = SweepSpec(base_config=cfg, param="P_ris_max",
                     grid=list(p_ris_grid_dbm), trials=trials,
                     schemes=["proposed"], seed_base=seed_base,
                     run_options=run_options, workers=workers)
    rows = run_sweep(spec)
    table = []
    for value in spec.grid:
        counts = [r["active_count"] for r in rows
                  if r["value"] == value and r["active_count"] >= 0]
        mean_active = float(np.mean(counts)) if counts else float("nan")
        passive = cfg.N - mean_active
        table.append({
            "p_ris_max_dbm": value,
            "mean_active_count": mean_active,
            "active_passive_ratio": mean_active / passive if passive > 0
            else float("inf"),
        })
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "active_ratio.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("p_ris_max_dbm", "mean_active_count",
                        "active_passive_ratio"))
            for r in table:
                w.writerow([_fmt(r["p_ris_max_dbm"]),
                            _fmt(r["mean_active_count"]),
                            _fmt(r["active_passive_ratio"])])
    return table, rows


@dataclass
class OracleResult:
    objective: float
    ris: RisConfiguration | None
    bf: BeamformingSolution | None
    n_candidates: int
    n_solved: int
    feasible: bool


def brute_force_oracle(
    cfg: SystemConfig, ch, phase_grid: int = 64, beta_grid: int = 8,
) -> OracleResult:
    """Exhaustive mode/phase/amplitude search with exact convex beamforming.

    Enumerates the binary modes, a uniform phase grid per element, and an
    amplitude grid per active element; each RIS candidate gets an exact
    convex beamformer solve plus a full audit. Ground truth for small
    instances (cost is exponential in N; N <= 3 enforced).

    Candidates are ranked by the bound P0 * min_l ||h_l||^2 >= achievable
    gain and the scan stops once the bound drops below the incumbent, so
    only a small fraction needs a solve.
    """
    N = cfg.N
    if N > 3:
        raise ValueError("the enumeration oracle is limited to N <= 3")
    total = sum(phase_grid**N * beta_grid**bin(mask).count("1")
                for mask in range(2 ** N))
    if total > 5_000_000:
        raise ValueError(f"grid too fine: {total} candidates; shrink the grids")
    phases = 2 * np.pi * (np.arange(phase_grid) + 1) / phase_grid
    betas = np.linspace(0.0, cfg.beta_max, beta_grid)

    cand_q, cand_beta, cand_theta = [], [], []
    for mask in range(2 ** N):
        q = np.array([(mask >> n) & 1 for n in range(N)], dtype=float)
        act = np.flatnonzero(q)
        theta_mesh = np.meshgrid(*([phases] * N), indexing="ij")
        theta_flat = np.stack([t.ravel() for t in theta_mesh], axis=1)
        if len(act):
            beta_mesh = np.meshgrid(*([betas] * len(act)), indexing="ij")
            beta_flat = np.stack([b.ravel() for b in beta_mesh], axis=1)
        else:
            beta_flat = np.zeros((1, 0))
        nt, nb = len(theta_flat), len(beta_flat)
        th = np.repeat(theta_flat, nb, axis=0)
        be = np.ones((nt * nb, N))
        if len(act):
            be[:, act] = np.tile(beta_flat, (nt, 1))
        cand_q.append(np.tile(q, (nt * nb, 1)))
        cand_beta.append(be)
        cand_theta.append(th)
    q_all = np.concatenate(cand_q)
    beta_all = np.concatenate(cand_beta)
    theta_all = np.concatenate(cand_theta)
    n_candidates = len(q_all)

    # Feasibility prescreens independent of the beamformers.
    act_gain = q_all * beta_all**2
    xi = cfg.sigma2_ris * act_gain @ np.abs(ch.a_tar.T) ** 2  # (cand, L)
    keep = np.all(xi <= cfg.xi_ris_max * (1 + cfg.tol_feas), axis=1)
    keep &= (cfg.sigma2_ris * act_gain.sum(axis=1)
             <= cfg.P_ris_max * (1 + cfg.tol_feas))
    q_all, beta_all, theta_all = q_all[keep], beta_all[keep], theta_all[keep]

    # Upper bound P0 * min_l ||h_l||^2, vectorized over candidates.
    phi = beta_all * np.exp(1j * theta_all)
    ub = np.full(len(q_all), np.inf)
    for l in range(cfg.L):
        hl = (np.conj(phi) * ch.a_tar[l][None, :]) @ ch.G.T
        ub = np.minimum(ub, cfg.P0 * np.sum(np.abs(hl) ** 2, axis=1))
    order = np.argsort(-ub, kind="stable")

    best = -np.inf
    best_ris = best_bf = None
    n_solved = 0
    tol = cfg.tol_feas
    for idx in order:
        if ub[idx] <= best:
            break
        ris = RisConfiguration(q=q_all[idx].copy(), beta=beta_all[idx].copy(),
                               theta=theta_all[idx].copy())
        res, ctx = solve_bs_stage(cfg, ch, ris)
        n_solved += 1
        if res.status != "optimal":
            continue
        bf = rank_one_construct(res.W_star, res.R0_star, ctx.h_cu)
        report = audit(cfg, ch, ris, bf, tol_feas=tol)
        if report.feasible and report.objective > best:
            best = report.objective
            best_ris, best_bf = ris, bf
    return OracleResult(
        objective=best if best_ris is not None else float("nan"),
        ris=best_ris, bf=best_bf, n_candidates=n_candidates,
        n_solved=n_solved, feasible=best_ris is not None,
    )
