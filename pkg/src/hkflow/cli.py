"""``hkflow`` command line: equilibrium | simulate | distance | verify.

Every command reads one JSON config (see :mod:`hkflow.config`) and writes CSV
tables plus a ``summary.json`` into the output directory.  Exit codes:

    0 pass, 1 property failure, 2 config error, 3 equilibrium failure,
    4 solver failure, 5 transport non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .diagnostics import (check_max_principle, dissipation_residuals, energy_residuals,
                          entropy_increases, fit_decay_rate)
from .entropy import DomainError, ModelError, RangeError, normalize_equilibrium
from .flow import FlowKind, SolverConfig, StepRejected, StiffnessError, mass_recovery, run
from .suites import SUITES, run_suite
from .transport import (DistanceKind, NonConvergenceError, SolverOpts, TransportProblem,
                        distance_slack, solve_dynamic)

log = logging.getLogger("hkflow")

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_EQUILIBRIUM, EXIT_SOLVER, EXIT_TRANSPORT = range(6)


class CommandError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


# ----------------------------------------------------------------------------
# output helpers


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(c, "") for c in columns]
            w.writerow([_cell(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


class Output:
    def __init__(self, cfg):
        self.dir = Path(cfg["output"]["directory"])
        self.formats = set(cfg["output"]["formats"])

    def csv(self, name, columns, rows):
        if "csv" in self.formats:
            write_csv(self.dir / name, columns, rows)

    def json(self, name, obj):
        if "json" in self.formats:
            write_json(self.dir / name, obj)


# ----------------------------------------------------------------------------
# commands


def _equilibrium(cfg, grid, model):
    try:
        return normalize_equilibrium(model, grid)
    except (ModelError, RangeError) as exc:
        raise CommandError(f"equilibrium: {exc}", EXIT_EQUILIBRIUM) from None


def cmd_equilibrium(cfg, args) -> int:
    grid, model = cfgmod.build_grid(cfg), cfgmod.build_model(cfg)
    eq = _equilibrium(cfg, grid, model)
    x = grid.cell_centers
    f = eq.model.f(x, eq.m.values)
    out = Output(cfg)
    out.csv("equilibrium.csv", ["x", "m", "f_at_m"], zip(x, eq.m.values, f))
    out.json("summary.json", {"command": "equilibrium", "model": model.name,
                              "c_star": eq.c_star, "residual": eq.residual, "mass": eq.m.mass,
                              "n_cells": grid.n_cells})
    log.info("c* = %.12g, residual %.2e", eq.c_star, eq.residual)
    return EXIT_OK


TRAJ_COLUMNS = ["t", "entropy", "energy", "production", "mass", "fbar", "min_f", "max_f"]


def _write_trajectory(out, grid, traj):
    out.csv("trajectory.csv", TRAJ_COLUMNS,
            [[getattr(r, c) for c in TRAJ_COLUMNS] for r in traj.diagnostics])
    for k, snap in enumerate(traj.snapshots):
        out.csv(f"snapshots/snapshot_{k:05d}.csv", ["x", "u"], zip(grid.cell_centers, snap.values))


def cmd_simulate(cfg, args) -> int:
    grid, model = cfgmod.build_grid(cfg), cfgmod.build_model(cfg)
    fl = cfg["flow"]
    kind = FlowKind(fl["kind"])
    if not model.integrable_at_zero:
        raise CommandError(f"model/parameters: {model.name} has no finite Phi, flows unavailable",
                           EXIT_CONFIG)
    if fl["mass_recovery"] and kind not in (FlowKind.SPHERICAL, FlowKind.FITNESS):
        raise CommandError("flow/mass_recovery: needs kind 'spherical' or 'fitness'", EXIT_CONFIG)
    eq = _equilibrium(cfg, grid, model) if cfg["initial"] == "equilibrium" else None
    u0 = cfgmod.build_density(cfg["initial"], grid, eq.m if eq else None,
                              Path(args.config).parent if args.config else None)
    if kind in (FlowKind.SPHERICAL, FlowKind.WASSERSTEIN) and abs(u0.mass - 1) > 1e-10:
        raise CommandError(f"initial: {kind.value} runs need unit mass, got {u0.mass!r}", EXIT_CONFIG)
    if kind is FlowKind.FITNESS and fl["mass_recovery"]:
        u0 = u0.scaled(fl["M0"] / u0.mass)
    conf = SolverConfig(t_end=fl["t_end"], dt_init=fl["dt_init"], snapshot_every=fl["snapshot_every"],
                        cfl_safety=fl["cfl_safety"])
    out = Output(cfg)
    try:
        traj = run(model, grid, u0, conf, kind)
    except StiffnessError as exc:
        if exc.trajectory is not None:
            _write_trajectory(out, grid, exc.trajectory)
        out.json("summary.json", {"command": "simulate", "error": str(exc)})
        raise CommandError(f"solver: {exc}", EXIT_SOLVER) from None
    except (StepRejected, DomainError, FloatingPointError) as exc:
        raise CommandError(f"solver: {exc}", EXIT_SOLVER) from None
    _write_trajectory(out, grid, traj)

    mass = traj.series("mass")
    summary = {
        "command": "simulate", "kind": kind.value, "model": model.name, "n_cells": grid.n_cells,
        "steps": traj.steps, "rejections": traj.rejections, "clipped_mass": traj.clipped_mass,
        "mass_initial": float(mass[0]), "mass_final": float(mass[-1]),
        "max_mass_drift": float(np.max(np.abs(mass - mass[0]))),
        "entropy_increases": int(entropy_increases(traj).size),
        "max_dissipation_residual": float(dissipation_residuals(traj).max()) if len(mass) > 1 else None,
    }
    if kind is not FlowKind.FITNESS and len(mass) > 1:
        summary["max_energy_residual"] = float(energy_residuals(traj).max())
    try:
        fit = fit_decay_rate(traj)
        summary.update(gamma=fit.gamma, gamma_r_squared=fit.r_squared, gamma_points=fit.n_points)
    except ValueError as exc:
        summary.update(gamma=None, gamma_note=str(exc))
    if kind is FlowKind.SPHERICAL:
        mp = check_max_principle(traj, model, grid)
        summary["max_principle"] = {"passed": mp.passed, "worst_violation": mp.worst_violation,
                                    "tolerance": mp.tolerance}
    if fl["mass_recovery"]:
        summary["mass_recovery"] = _mass_recovery(cfg, out, model, grid, u0, conf, kind, traj)
    out.json("summary.json", summary)
    log.info("%s: %d steps, final entropy %.6g", kind.value, traj.steps, traj.diagnostics[-1].entropy)
    return EXIT_OK


def _mass_recovery(cfg, out, model, grid, u0, conf, kind, traj):
    M0 = cfg["flow"]["M0"]
    if kind is FlowKind.SPHERICAL:
        rec = mass_recovery(model, grid, traj, M0)
        out.csv("mass.csv", ["t", "M"], zip(rec.times, rec.M))
        return {"M_final": float(rec.M[-1])}
    # fitness run given: recover it from a spherical run of the profile
    spherical = run(model, grid, u0.scaled(1 / u0.mass), conf, FlowKind.SPHERICAL)
    rec = mass_recovery(model, grid, spherical, u0.mass)
    direct = traj.series("mass")
    out.csv("mass.csv", ["t", "M", "M_direct"], zip(rec.times, rec.M, direct))
    U_dir, U_rec = traj.snapshots[-1].values, rec.U[-1].values
    rel = float(np.sum(np.abs(U_rec - U_dir)) / np.sum(np.abs(U_dir)))
    return {"M_final": float(rec.M[-1]), "M_direct_final": float(direct[-1]),
            "relative_l1_final": rel}


def cmd_distance(cfg, args) -> int:
    if "endpoints" not in cfg:
        raise CommandError("endpoints: required for the distance command", EXIT_CONFIG)
    grid, model = cfgmod.build_grid(cfg), cfgmod.build_model(cfg)
    ends = cfg["endpoints"]
    eq = None
    if "equilibrium" in (ends["rho0"], ends["rho1"]):
        eq = _equilibrium(cfg, grid, model).m
    base = Path(args.config).parent if args.config else None
    rho0 = cfgmod.build_density(ends["rho0"], grid, eq, base)
    rho1 = cfgmod.build_density(ends["rho1"], grid, eq, base)
    t = cfg["transport"]
    opts = SolverOpts(max_iters=t["max_iters"], tol=t["tol"], seed=cfg["seed"])
    problems = []
    for k in t["kinds"]:
        try:
            problems.append(TransportProblem(grid, rho0, rho1, DistanceKind(k), t["n_time"], opts))
        except ValueError as exc:
            raise CommandError(f"endpoints: {exc}", EXIT_CONFIG) from None
    out = Output(cfg)
    results, failed = {}, None
    for prob in problems:
        try:
            res = solve_dynamic(prob)
        except NonConvergenceError as exc:
            res, failed = exc.result, str(exc)
        results[prob.kind.value] = res
        if t["dump_interpolation"] and res.interpolation is not None:
            rho = res.interpolation[0]
            times = np.linspace(0, 1, rho.shape[0])
            out.csv(f"interpolation_{prob.kind.value}.csv", ["t", "x", "rho"],
                    [(tk, xi, v) for tk, row in zip(times, rho) for xi, v in zip(grid.cell_centers, row)])
        if failed:
            break
    cols = ["kind", "distance", "distance_sq", "residual", "iters", "converged"]
    out.csv("distance.csv", cols, [[k, r.distance, r.distance_sq, r.residual, r.iters, r.converged]
                                   for k, r in results.items()])
    summary = {"command": "distance", "n_time": t["n_time"], "n_cells": grid.n_cells,
               "distances": {k: {"distance": r.distance, "distance_sq": r.distance_sq,
                                 "residual": r.residual, "iters": r.iters, "converged": r.converged}
                             for k, r in results.items()}}
    if failed:
        summary["error"] = failed
        out.json("summary.json", summary)
        raise CommandError(f"transport: {failed}", EXIT_TRANSPORT)
    if {"W2", "HK", "HKS"} <= set(results):
        eps = 3 * distance_slack(results.values())
        d = {k: r.distance for k, r in results.items()}
        ok = d["HK"] <= d["HKS"] + eps and d["HKS"] <= d["W2"] + eps
        summary["ordering"] = {"passed": ok, "epsilon": eps}
        if not ok:
            out.json("summary.json", summary)
            raise CommandError("ordering d_HK <= d_HKS <= W2 violated", EXIT_PROPERTY)
    out.json("summary.json", summary)
    for k, r in results.items():
        log.info("%s: d = %.10g (residual %.1e, %d iterations)", k, r.distance, r.residual, r.iters)
    return EXIT_OK


def cmd_verify(cfg, args) -> int:
    suite = cfg["verify"]["suite"]
    names = SUITES if suite == "all" else (suite,)
    out = Output(cfg)
    report, failures = {}, []
    for name in names:
        log.info("suite %s ...", name)
        res = run_suite(name, cfg, jobs=args.jobs)
        out.csv(f"{name}.csv", res.columns, res.rows)
        report[name] = {"passed": res.passed, "verdicts": res.verdicts, "notes": res.notes}
        failures.extend({"suite": name, **f} for f in res.failures)
        log.info("suite %s: %s", name, "pass" if res.passed else "FAIL")
    passed = all(r["passed"] for r in report.values())
    out.json("verdicts.json", {"command": "verify", "seed": cfg["seed"], "passed": passed,
                               "suites": report})
    if failures:
        write_json(out.dir / "failures.json", {"seed": cfg["seed"], "failures": failures})
    return EXIT_OK if passed else EXIT_PROPERTY


COMMANDS = {"equilibrium": cmd_equilibrium, "simulate": cmd_simulate, "distance": cmd_distance,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hkflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config (defaults are used when omitted)")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for verify sweeps")
    p.add_argument("--seed", type=int, help="seed for generated families (overrides config)")
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = cfgmod.load(args.config) if args.config else cfgmod.validate({})
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg["seed"] = args.seed
        if args.out:
            cfg["output"]["directory"] = args.out
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"hkflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        print(f"hkflow: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
