"""Batch command-line interface.

Subcommands: ``run`` (one scenario/scheme), ``sweep`` (seeded Monte-Carlo
sweep over one parameter), ``beampattern`` (angle-grid gain map of a
solved scenario), ``oracle`` (small-instance enumeration), ``audit``
(re-check an archived run against every constraint).

Exit code 0 means every requested run completed (converged or flagged in
its row/trace); nonzero signals a harness error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench
from .channels import generate_channels
from .config import SystemConfig, load_config
from .metrics import audit
from .optimizer import RunOptions, load_trace, run_scheme, save_trace, trace_to_dict
from .config import config_from_dict

ALL_SCHEMES = ("proposed", "fixed_mode", "full_passive", "full_active")


def _load_cfg(args) -> SystemConfig:
    return load_config(args.config) if args.config else SystemConfig()


def _run_options(args) -> RunOptions:
    opts = RunOptions(seed=args.seed)
    if getattr(args, "l_gau", None):
        opts.l_gau = args.l_gau
    return opts


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    ch = generate_channels(cfg, args.seed)
    trace = run_scheme(args.scheme, cfg, ch, _run_options(args),
                       n_active=args.n_active)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"run_{args.scheme}_seed{args.seed}.json")
    save_trace(trace, path)
    print(json.dumps({
        "scheme": trace.scheme, "status": trace.status,
        "converged": trace.converged, "objective_w": trace.objective,
        "iterations": trace.n_outer, "active_count":
            trace.ris.n_active if trace.ris is not None else None,
        "trace": path,
    }, indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    grid = [float(g) for g in args.grid.split(",")]
    if args.param in ("N", "M", "L"):
        grid = [int(g) for g in grid]
    schemes = args.scheme.split(",") if args.scheme else ["proposed"]
    for s in schemes:
        if s not in ALL_SCHEMES:
            raise SystemExit(f"unknown scheme {s!r}")
    spec = bench.SweepSpec(
        base_config=cfg, param=args.param, grid=grid, trials=args.trials,
        schemes=schemes, seed_base=args.seed, n_active=args.n_active,
        run_options=_run_options(args), out_dir=args.out,
        workers=args.workers,
    )
    rows = bench.run_sweep(spec)
    if not args.out:
        bench.write_sweep_csv(rows, "sweep.csv")
        print("wrote sweep.csv")
    else:
        print(f"wrote {os.path.join(args.out, 'sweep.csv')} ({len(rows)} rows)")
    return 0


def cmd_beampattern(args) -> int:
    cfg = _load_cfg(args)
    ch = generate_channels(cfg, args.seed)
    trace = run_scheme(args.scheme, cfg, ch, _run_options(args),
                       n_active=args.n_active)
    if trace.ris is None or trace.beamforming is None:
        print("run produced no solution", file=sys.stderr)
        return 1
    az, el, gains = bench.beampattern_grid(cfg, ch, trace.beamforming,
                                           trace.ris, grid_res=args.grid_res)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"beampattern_seed{args.seed}.csv")
    bench.write_beampattern_csv(az, el, gains, path)
    peaks = bench.find_local_maxima(gains, top=2)
    print(json.dumps({
        "csv": path, "status": trace.status, "objective_w": trace.objective,
        "peaks_deg": [[float(np.rad2deg(az[i])), float(np.rad2deg(el[j])), v]
                      for i, j, v in peaks],
        "targets_deg": np.rad2deg(cfg.target_angles).tolist(),
    }, indent=2))
    return 0


def cmd_oracle(args) -> int:
    cfg = _load_cfg(args)
    ch = generate_channels(cfg, args.seed)
    res = bench.brute_force_oracle(cfg, ch, phase_grid=args.phase_grid,
                                   beta_grid=args.beta_grid)
    print(json.dumps({
        "objective_w": res.objective, "feasible": res.feasible,
        "candidates": res.n_candidates, "solved": res.n_solved,
        "q": res.ris.q.tolist() if res.ris is not None else None,
        "beta": res.ris.beta.tolist() if res.ris is not None else None,
        "theta": res.ris.theta.tolist() if res.ris is not None else None,
    }, indent=2))
    return 0


def cmd_audit(args) -> int:
    trace = load_trace(args.trace)
    cfg = config_from_dict(trace.config)
    ch = generate_channels(cfg, trace.channel_seed)
    report = audit(cfg, ch, trace.ris, trace.beamforming)
    print(report.to_json())
    return 0 if report.feasible else 3


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="hybrid-ris-isac",
                                 description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, scheme=True):
        p.add_argument("--config", help="scenario JSON (defaults built in)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output directory")
        p.add_argument("--l-gau", type=int, dest="l_gau",
                       help="Gaussian randomization samples")
        p.add_argument("--n-active", type=int, default=12,
                       help="active elements of the fixed_mode scheme")
        if scheme:
            p.add_argument("--scheme", default="proposed",
                           choices=ALL_SCHEMES)

    p = sub.add_parser("run", help="solve one scenario")
    common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over one parameter")
    common(p, scheme=False)
    p.add_argument("--scheme", default="proposed",
                   help="comma-separated scheme list")
    p.add_argument("--param", required=True, choices=bench.SWEEPABLE)
    p.add_argument("--grid", required=True,
                   help="comma-separated values (N/M/L counts, dBm, dB)")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("beampattern", help="angle-grid gain map")
    common(p)
    p.add_argument("--grid-res", type=int, default=91)
    p.set_defaults(fn=cmd_beampattern)

    p = sub.add_parser("oracle", help="small-instance enumeration (N <= 3)")
    common(p, scheme=False)
    p.add_argument("--phase-grid", type=int, default=64)
    p.add_argument("--beta-grid", type=int, default=8)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("audit", help="re-audit an archived run")
    p.add_argument("--trace", required=True, help="SolveTrace JSON path")
    p.set_defaults(fn=cmd_audit)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
