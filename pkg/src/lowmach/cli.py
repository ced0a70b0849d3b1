"""Command-line interface.

Subcommands:
  simulate    one compressible run at a single Mach number
  limit-sim   incompressible and averaged-system runs
  resonances  resonance table statistics and small divisors
  norms       norm table of a checkpointed field
  converge    full Mach-number sweep with diagnostics report
  check       fast invariant battery

Exit codes: 0 success, 2 invariant failure, 3 vacuum/CFL abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .dyadic import norm, parse_norm_spec
from .experiments import (
    ConvergenceReport,
    ExperimentConfig,
    convergence_study,
    emit_report,
    run_invariant_suite,
    vanishing_limit_check,
)
from .lattice import LatticeSpec, SpectralField
from .operators import VacuumError, acoustic_transform, helmholtz_project
from .resonance import build_limit_tables, small_divisors
from .solvers import (
    CFLError,
    CubicTimeInterpolant,
    generate_initial_data,
    load_checkpoint,
    run_trajectory,
    save_checkpoint,
)

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_ABORT = 3


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config, out_dir=args.out)
    else:
        cfg = ExperimentConfig(lattice=LatticeSpec.square(2, 32), out_dir=args.out)
    updates = {}
    if getattr(args, "eps", None):
        updates["eps_list"] = tuple(float(e) for e in args.eps.split(","))
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    eps = cfg.eps_list[0]
    solver_cfg = cfg.solver_config(eps)
    a0, u0 = generate_initial_data(
        cfg.lattice, cfg.amplitude_a, cfg.amplitude_u, cfg.smoothness, cfg.seed
    )
    traj = run_trajectory((a0, u0), solver_cfg, "compressible")
    os.makedirs(cfg.out_dir, exist_ok=True)
    final = traj.states[-1]
    path = os.path.join(cfg.out_dir, f"compressible_eps{eps:g}.lmc")
    save_checkpoint(
        path,
        cfg.lattice,
        float(traj.times[-1]),
        {"a": final["a"], "u": final["u"]},
        meta={"eps": eps, "kind": "compressible"},
    )
    summary = {
        "eps": eps,
        "t_final": float(traj.times[-1]),
        "samples": len(traj),
        "final_a_l2": final["a"].l2_norm(),
        "final_u_l2": final["u"].l2_norm(),
        "checkpoint": path,
    }
    print(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_OK


def _cmd_limit_sim(args) -> int:
    cfg = _load_config(args)
    solver_cfg = cfg.solver_config(cfg.eps_list[0])
    a0, u0 = generate_initial_data(
        cfg.lattice, cfg.amplitude_a, cfg.amplitude_u, cfg.smoothness, cfg.seed
    )
    v0 = helmholtz_project(u0, "P")
    traj_v = run_trajectory(v0, solver_cfg, "incompressible")
    table = build_limit_tables(cfg.lattice, cache_dir=cfg.cache_dir)
    v_at = CubicTimeInterpolant(traj_v.times, traj_v.series("v"))
    V0 = acoustic_transform(a0, u0 - v0)
    traj_V = run_trajectory(V0, solver_cfg, "limit", table=table, v_at=v_at)
    os.makedirs(cfg.out_dir, exist_ok=True)
    vpath = os.path.join(cfg.out_dir, "incompressible.lmc")
    save_checkpoint(
        vpath,
        cfg.lattice,
        float(traj_v.times[-1]),
        {"v": traj_v.states[-1]["v"]},
        meta={"kind": "incompressible"},
    )
    wpath = os.path.join(cfg.out_dir, "limit.lmc")
    save_checkpoint(
        wpath,
        cfg.lattice,
        float(traj_V.times[-1]),
        {"V": traj_V.states[-1]["V"]},
        meta={"kind": "limit"},
    )
    print(
        json.dumps(
            {
                "incompressible": vpath,
                "limit": wpath,
                "final_v_l2": traj_v.states[-1]["v"].l2_norm(),
                "final_V_l2": traj_V.states[-1]["V"].l2_norm(),
            },
            indent=1,
            sort_keys=True,
        )
    )
    return EXIT_OK


def _cmd_resonances(args) -> int:
    cfg = _load_config(args)
    table = build_limit_tables(cfg.lattice, cache_dir=cfg.cache_dir)
    report = small_divisors(
        cfg.lattice, args.cutoff, theta=cfg.theta, cache_dir=cfg.cache_dir
    )
    payload = {
        "lattice": cfg.lattice.descriptor(),
        "limit_table_counts": table.counts(),
        "small_divisors": report.to_json(),
    }
    text = json.dumps(payload, indent=1, sort_keys=True)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "resonances.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_norms(args) -> int:
    lattice, time, arrays, meta = load_checkpoint(args.field)
    specs = [parse_norm_spec(s) for s in args.spec]
    rows = []
    for name, arr in sorted(arrays.items()):
        field = SpectralField(lattice, np.asarray(arr))
        for spec in specs:
            rows.append((name, spec.key(), norm(field, spec)))
    width = max(len(r[1]) for r in rows) if rows else 10
    print(f"# t = {time}, meta = {json.dumps(meta, sort_keys=True)}")
    for name, key, value in rows:
        print(f"{name:>8s}  {key:<{width}s}  {value!r}")
    return EXIT_OK


def _cmd_converge(args) -> int:
    cfg = _load_config(args)
    progress = (lambda msg: print(f"[converge] {msg}", file=sys.stderr)) if args.verbose else None
    if args.threads > 1:
        report = _parallel_study(cfg, args.threads)
    else:
        report = convergence_study(cfg, progress=progress)
    paths = emit_report(report, cfg.out_dir)
    verdicts = vanishing_limit_check(report)
    print(
        json.dumps(
            {
                "files": paths,
                "slope_W_theta": report.slope,
                "monotonicity": report.verdicts,
                "vanishing": {k: v["pass"] for k, v in verdicts.items()},
            },
            indent=1,
            sort_keys=True,
        )
    )
    return EXIT_OK


def _parallel_study(cfg: ExperimentConfig, threads: int) -> ConvergenceReport:
    """Sweep members are independent; distribute them over processes."""
    from concurrent.futures import ProcessPoolExecutor as _Pool
    from .experiments import _monotone_verdict, fit_loglog_slope
    from .functionals import DiagnosticsRow

    with _Pool(max_workers=threads) as pool:
        futures = [
            pool.submit(_single_eps_study, cfg.to_json(), eps) for eps in cfg.eps_list
        ]
        partials = [f.result() for f in futures]
    # rows in deterministic descending-eps order
    rows = []
    for (eps, payload), eps_expected in zip(partials, cfg.eps_list):
        assert eps == eps_expected
        rows.append(
            DiagnosticsRow(eps=payload["eps"], t_final=payload["T"], values=payload["values"])
        )
    slope = fit_loglog_slope(cfg.eps_list, [r.values["W_theta"] for r in rows])
    verdicts = {
        key: _monotone_verdict([r.values[key] for r in rows])
        for key in ("D", "eps_a_linf_besov", "Vdiff_composite", "Pudiff_composite", "W_theta")
    }
    return ConvergenceReport(
        config=cfg.to_json(),
        rows=rows,
        slope=slope,
        slope_flag="ok" if len(rows) >= 2 else "insufficient-data",
        verdicts=verdicts,
        timings={},
    )


def _single_eps_study(config_json: dict, eps: float):
    cfg = ExperimentConfig.from_json(config_json)
    cfg = dataclasses.replace(cfg, eps_list=(eps,))
    report = convergence_study(cfg)
    row = report.rows[0]
    return eps, {"eps": row.eps, "T": row.t_final, "values": row.values}


def _cmd_check(args) -> int:
    results = run_invariant_suite()
    ok = True
    for name, passed, detail in results:
        status = "ok" if passed else "FAIL"
        print(f"{status:>4s}  {name}  {detail}")
        ok &= passed
    cfg_issues = []
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        cfg_issues = cfg.issues()
        for issue in cfg_issues:
            print(f"warn  config: {issue}")
    return EXIT_OK if ok else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowmach",
        description="Pseudospectral simulation and diagnostics for slightly "
        "compressible flow on the torus",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="random seed override")
        p.add_argument("--eps", help="comma-separated Mach numbers")
        p.add_argument("--threads", type=int, default=1, help="sweep worker count")

    p = sub.add_parser("simulate", help="single compressible run")
    common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("limit-sim", help="incompressible plus averaged-system run")
    common(p)
    p.set_defaults(func=_cmd_limit_sim)

    p = sub.add_parser("resonances", help="resonance statistics and small divisors")
    common(p)
    p.add_argument("--cutoff", type=float, default=2.0, help="modulus cutoff M")
    p.set_defaults(func=_cmd_resonances)

    p = sub.add_parser("norms", help="norm table for a checkpointed field")
    p.add_argument("--field", required=True, help="checkpoint file")
    p.add_argument(
        "--spec",
        action="append",
        default=None,
        help="norm spec string (repeatable), e.g. B:s=1:p=2:r=1:band=h:eta=32",
    )
    p.set_defaults(func=_cmd_norms)

    p = sub.add_parser("converge", help="full Mach sweep with report")
    common(p)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_converge)

    p = sub.add_parser("check", help="fast invariant battery")
    p.add_argument("--config", help="also validate a configuration file")
    p.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "spec", "missing") is None:
        args.spec = ["B:s=0:p=2:r=1", "B:s=1:p=2:r=1", "H:s=1"]
    try:
        return args.func(args)
    except (VacuumError, CFLError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
