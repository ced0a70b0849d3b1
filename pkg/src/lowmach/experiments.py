"""Experiment configuration, the Mach-number sweep, and report emission."""

from __future__ import annotations

import json
import math
import os
import time as _time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dyadic import NormSpec, block_range, compute_jb, norm
from .functionals import DiagnosticsRow, FunctionalSettings, compute_functionals
from .lattice import (
    GridField,
    LatticeSpec,
    SpectralField,
    forward_transform,
    inverse_transform,
)
from .operators import PressureLaw, acoustic_transform, helmholtz_project, wave_group
from .resonance import build_limit_tables, resonance_test
from .solvers import (
    CubicTimeInterpolant,
    Forcing,
    SolverConfig,
    generate_initial_data,
    run_trajectory,
)

__all__ = [
    "ExperimentConfig",
    "ConvergenceReport",
    "convergence_study",
    "vanishing_limit_check",
    "fit_loglog_slope",
    "emit_report",
    "run_invariant_suite",
]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of a Mach-number sweep."""

    lattice: LatticeSpec
    eps_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    mu: float = 0.05
    lam: float = 0.05
    gamma: float = 2.0
    dt: float = 2.5e-3
    t_final: float = 1.0
    sample_stride: int = 2
    zeta: float = 8.0
    eta0: float | None = None  # defaults to nu/2
    theta: float = 0.25
    amplitude_a: float = 2.0
    amplitude_u: float = 2.0
    smoothness: float = 3.0
    seed: int = 0
    forcing: Forcing | None = None
    out_dir: str = "out"
    cache_dir: str | None = None

    def __post_init__(self):
        if not self.eps_list:
            raise ValueError("need at least one Mach number")
        if any(e2 >= e1 for e1, e2 in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("Mach numbers must be strictly descending")
        if not (0 < self.theta < 0.5):
            raise ValueError("theta must lie in (0, 1/2)")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        for issue in self.issues():
            warnings.warn(issue, RuntimeWarning)

    @property
    def nu(self) -> float:
        return 2.0 * self.mu + self.lam

    @property
    def eta0_value(self) -> float:
        return 0.5 * self.nu if self.eta0 is None else self.eta0

    def issues(self) -> list[str]:
        """Band-geometry conditions that are assumed by the estimates.

        Violations are reported as warnings rather than errors: the
        functionals remain well-defined (the medium band is simply empty when
        zeta >= eta0/eps).
        """
        out = []
        for eps in self.eps_list:
            if not (self.zeta < self.eta0_value / eps):
                out.append(
                    f"zeta = {self.zeta:g} >= eta0/eps = {self.eta0_value / eps:g} "
                    f"for eps = {eps:g}: medium band is empty"
                )
        return out

    def solver_config(self, eps: float) -> SolverConfig:
        return SolverConfig(
            lattice=self.lattice,
            mu=self.mu,
            lam=self.lam,
            eps=eps,
            law=PressureLaw.gamma_law(self.gamma),
            dt=self.dt,
            t_final=self.t_final,
            forcing=self.forcing,
            sample_stride=self.sample_stride,
        )

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "lattice": self.lattice.descriptor(),
            "solver": {
                "mu": self.mu,
                "lambda": self.lam,
                "gamma": self.gamma,
                "dt": self.dt,
                "t_final": self.t_final,
                "sample_stride": self.sample_stride,
            },
            "experiment": {
                "eps": list(self.eps_list),
                "zeta": self.zeta,
                "eta0": self.eta0,
                "theta": self.theta,
                "amplitude_a": self.amplitude_a,
                "amplitude_u": self.amplitude_u,
                "smoothness": self.smoothness,
                "seed": self.seed,
            },
            "forcing": self.forcing.to_json() if self.forcing else [],
        }

    @classmethod
    def from_json(cls, data: dict, out_dir: str = "out") -> "ExperimentConfig":
        if data.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema {data.get('schema')!r}")
        lattice = LatticeSpec.from_descriptor(data["lattice"])
        solver = data.get("solver", {})
        exp = data.get("experiment", {})
        forcing = None
        if data.get("forcing"):
            forcing = Forcing.from_json(lattice, data["forcing"])
        return cls(
            lattice=lattice,
            eps_list=tuple(exp.get("eps", (0.2, 0.1, 0.05, 0.025))),
            mu=float(solver.get("mu", 0.05)),
            lam=float(solver.get("lambda", 0.05)),
            gamma=float(solver.get("gamma", 2.0)),
            dt=float(solver.get("dt", 2.5e-3)),
            t_final=float(solver.get("t_final", 1.0)),
            sample_stride=int(solver.get("sample_stride", 2)),
            zeta=float(exp.get("zeta", 8.0)),
            eta0=exp.get("eta0"),
            theta=float(exp.get("theta", 0.25)),
            amplitude_a=float(exp.get("amplitude_a", 2.0)),
            amplitude_u=float(exp.get("amplitude_u", 2.0)),
            smoothness=float(exp.get("smoothness", 3.0)),
            seed=int(exp.get("seed", 0)),
            forcing=forcing,
            out_dir=out_dir,
        )

    @classmethod
    def load(cls, path: str, out_dir: str = "out") -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), out_dir=out_dir)


@dataclass
class ConvergenceReport:
    config: dict
    rows: list[DiagnosticsRow]
    slope: float | None
    slope_flag: str
    verdicts: dict
    timings: dict = field(default_factory=dict)

    def row_values(self, key: str) -> list[float]:
        return [row.values[key] for row in self.rows]


def fit_loglog_slope(eps_values, values):
    """Least-squares slope of log(value) against log(eps)."""
    eps_values = np.asarray(eps_values, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if eps_values.size < 2 or np.any(values <= 0):
        return None
    return float(np.polyfit(np.log(eps_values), np.log(values), 1)[0])


def _monotone_verdict(values) -> str:
    diffs = np.diff(values)
    return "decreasing" if np.all(diffs < 0) else "not-decreasing"


def convergence_study(cfg: ExperimentConfig, progress=None) -> ConvergenceReport:
    """Run the full sweep: one incompressible and one limit solve, then one
    compressible solve per Mach number, with the functional table."""
    timings: dict = {}
    t0 = _time.perf_counter()
    a0, u0 = generate_initial_data(
        cfg.lattice, cfg.amplitude_a, cfg.amplitude_u, cfg.smoothness, cfg.seed
    )
    v0 = helmholtz_project(u0, "P")
    qu0 = u0 - v0
    base = cfg.solver_config(cfg.eps_list[0])
    traj_v = run_trajectory(v0, base, "incompressible")
    timings["incompressible"] = _time.perf_counter() - t0

    t0 = _time.perf_counter()
    table = build_limit_tables(cfg.lattice, cache_dir=cfg.cache_dir)
    v_at = CubicTimeInterpolant(traj_v.times, traj_v.series("v"))
    V0 = acoustic_transform(a0, qu0)
    traj_V = run_trajectory(V0, base, "limit", table=table, v_at=v_at)
    timings["limit"] = _time.perf_counter() - t0

    rows = []
    for eps in cfg.eps_list:
        if progress:
            progress(f"eps = {eps:g}")
        t0 = _time.perf_counter()
        solver_cfg = cfg.solver_config(eps)
        traj_eps = run_trajectory((a0, u0), solver_cfg, "compressible")
        settings = FunctionalSettings(
            eps=eps, zeta=cfg.zeta, eta0=cfg.eta0_value, theta=cfg.theta
        )
        row = compute_functionals(traj_eps, traj_v, traj_V, settings)
        row.wall_time = _time.perf_counter() - t0
        row.values["W_theta_scaled"] = row.values["W_theta"] / eps ** (
            cfg.theta / (1.0 + cfg.theta)
        )
        rows.append(row)
        timings[f"eps_{eps:g}"] = row.wall_time

    if len(cfg.eps_list) >= 2:
        slope = fit_loglog_slope(cfg.eps_list, [r.values["W_theta"] for r in rows])
        slope_flag = "ok"
    else:
        slope = None
        slope_flag = "insufficient-data"
    verdicts = {
        key: _monotone_verdict([r.values[key] for r in rows])
        for key in ("D", "eps_a_linf_besov", "Vdiff_composite", "Pudiff_composite", "W_theta")
    }
    return ConvergenceReport(
        config=cfg.to_json(),
        rows=rows,
        slope=slope,
        slope_flag=slope_flag,
        verdicts=verdicts,
        timings=timings,
    )


def vanishing_limit_check(report: ConvergenceReport, fraction: float = 0.5) -> dict:
    """Verdicts for the vanishing quantities across the Mach sweep.

    Each quantity must decrease strictly along the descending Mach list and
    end below ``fraction`` of its initial value.
    """
    out = {}
    for key in ("eps_a_linf_besov", "Vdiff_composite", "Pudiff_composite"):
        vals = report.row_values(key)
        decreasing = bool(np.all(np.diff(vals) < 0))
        small_enough = vals[-1] <= fraction * vals[0]
        out[key] = {
            "pass": decreasing and small_enough,
            "decreasing": decreasing,
            "final_over_initial": vals[-1] / vals[0] if vals[0] > 0 else math.inf,
        }
    return out


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_report(report: ConvergenceReport, out_dir: str) -> dict:
    """Write report.csv (wide), report_long.csv, and report.json.

    The CSV layout is fixed: columns eps, T, then functional names sorted;
    identical configs and seeds produce byte-identical CSV files (wall times
    live only in the JSON).
    """
    os.makedirs(out_dir, exist_ok=True)
    names = sorted({name for row in report.rows for name in row.values})
    wide_path = os.path.join(out_dir, "report.csv")
    with open(wide_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["eps", "T"] + names) + "\n")
        for row in report.rows:
            cells = [_fmt(row.eps), _fmt(row.t_final)]
            cells += [_fmt(row.values[name]) for name in names]
            fh.write(",".join(cells) + "\n")
    long_path = os.path.join(out_dir, "report_long.csv")
    with open(long_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("eps,T,functional,value\n")
        for row in report.rows:
            for name in names:
                fh.write(
                    ",".join(
                        [_fmt(row.eps), _fmt(row.t_final), name, _fmt(row.values[name])]
                    )
                    + "\n"
                )
    json_path = os.path.join(out_dir, "report.json")
    payload = {
        "schema": SCHEMA_VERSION,
        "config": report.config,
        "rows": [
            {"eps": row.eps, "T": row.t_final, "values": row.values}
            for row in report.rows
        ],
        "slope_W_theta": report.slope,
        "slope_flag": report.slope_flag,
        "verdicts": report.verdicts,
        "timings": report.timings,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return {"wide": wide_path, "long": long_path, "json": json_path}


def load_report_rows(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return payload["rows"]


# ---------------------------------------------------------------------------
# Invariant battery (CLI `check`)
# ---------------------------------------------------------------------------


def run_invariant_suite(resolution: int = 16, seed: int = 0):
    """Fast self-checks of the core machinery; returns (name, ok, detail)."""
    results = []
    lattice = LatticeSpec.square(2, resolution)
    rng = np.random.default_rng(seed)

    def record(name, ok, detail=""):
        results.append((name, bool(ok), detail))

    values = rng.standard_normal((1,) + lattice.resolution)
    fld = forward_transform(GridField(lattice, values))
    back = forward_transform(inverse_transform(fld))
    err = float(np.max(np.abs(back.coeffs - fld.coeffs)))
    record("transform-round-trip", err <= 1e-12 * np.max(np.abs(fld.coeffs)), f"err={err:.2e}")

    grid = inverse_transform(fld)
    integral = float(
        np.sum(np.abs(grid.values) ** 2) * lattice.volume / np.prod(lattice.resolution)
    )
    coeff = float(np.sum(fld.mode_power()))
    record(
        "parseval",
        abs(integral - coeff) <= 1e-12 * coeff,
        f"defect={abs(integral - coeff):.2e}",
    )

    total = None
    from .dyadic import dyadic_block, low_cut

    total = low_cut(fld, compute_jb(lattice) + 1)
    for j in block_range(lattice):
        total = total + dyadic_block(fld, j)
    err = float(np.max(np.abs(total.coeffs - fld.coeffs)))
    record("block-partition", err <= 1e-12 * np.max(np.abs(fld.coeffs)), f"err={err:.2e}")

    uvals = rng.standard_normal((lattice.d,) + lattice.resolution)
    u = forward_transform(GridField(lattice, uvals))
    p = helmholtz_project(u, "P")
    q = helmholtz_project(u, "Q")
    err = float(np.max(np.abs((p + q).coeffs - u.coeffs)))
    record("helmholtz-identity", err <= 1e-12 * np.max(np.abs(u.coeffs)), f"err={err:.2e}")

    coeffs = fld.coeffs.copy()
    coeffs[(0,) + (0,) * lattice.d] = 0.0
    a = SpectralField(lattice, coeffs, reality=True)
    V = acoustic_transform(a, q)
    w = wave_group(V, 1.37)
    n1 = norm(V, NormSpec(kind="H", s=0.75))
    n2 = norm(w, NormSpec(kind="H", s=0.75))
    record("wave-group-isometry", abs(n1 - n2) <= 1e-12 * n1, f"defect={abs(n1 - n2):.2e}")

    record(
        "resonance-hand-cases",
        resonance_test([(1, 1), (1, 1), (-1, 4)]).resonant
        and not resonance_test([(1, 1), (1, 1), (-1, 2)]).resonant
        and resonance_test([(1, 9), (1, 16), (-1, 49)]).resonant,
    )

    full = norm(fld, NormSpec(s=0.5, r=1))
    h = norm(fld, NormSpec(s=0.5, r=1, band="h", eta=4.0))
    m = norm(fld, NormSpec(s=0.5, r=1, band="m", zeta=1.0, eta=4.0))
    lo = norm(fld, NormSpec(s=0.5, r=1, band="l", zeta=1.0))
    record(
        "banded-additivity",
        abs(h + m + lo - full) <= 1e-12 * full,
        f"defect={abs(h + m + lo - full):.2e}",
    )
    return results
