"""Property suites behind ``hkflow verify``.

Each suite expands into independent cases (picklable specs), which may run in
a process pool, and then folds the case rows into named boolean verdicts.
Grid sizes and horizons are fixed at desk scale so that verdicts are
comparable between machines; the model, family sizes and seed come from the
configuration.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import config as cfgmod
from .diagnostics import (CounterexampleError, check_max_principle, comparison_check,
                          dissipation_residuals, energy_residuals, entropy_increases,
                          eep_ratio_sweep, fit_decay_rate)
from .entropy import normalize_equilibrium
from .fields import DensityField
from .flow import FlowKind, SolverConfig, run
from .grid import Grid
from .transport import (DistanceKind, NonConvergenceError, SolverOpts, TalagrandCounterexample,
                        check_ordering, talagrand_check)

SUITES = ("dissipation", "maxprinciple", "eep", "logsobolev", "talagrand", "ordering", "comparison")

# fixed desk-scale settings
DISSIPATION_CELLS = 256
DISSIPATION_T_END = 0.02
MAXPRINCIPLE_CELLS = 128
MAXPRINCIPLE_T_END = 2.0
EEP_CELLS = 256
TRANSPORT_CELLS = 64
TRANSPORT_TIME = 32
COMPARISON_CELLS = 64
COMPARISON_T_END = 0.1
SUP_STABILITY = 0.05
BOUND_SLACK = 0.01

F1 = {"name": "power_law", "parameters": {"alpha": 1.0}}
F2 = {"name": "log_potential", "parameters": {"V": "cos(2*pi*x)"}}
F3 = {"name": "arctangential", "parameters": {}}
HEAT = {"name": "log_potential", "parameters": {"V": "0"}}


@dataclass
class SuiteResult:
    name: str
    columns: list
    rows: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


def _model(spec):
    return cfgmod.build_model({"model": spec})


def _label(spec) -> str:
    p = spec.get("parameters", {})
    if spec["name"] == "power_law":
        return f"power_law(alpha={p.get('alpha', 1.0):g})"
    if spec["name"] == "log_potential":
        return f"log_potential(V={p.get('V', '0')})"
    return spec["name"]


# ----------------------------------------------------------------------------
# seeded families


def cosine_family(grid: Grid, amplitudes) -> list:
    """``1 + a cos(2 pi x / L)``; unit mass on the unit circle."""
    x = grid.cell_centers
    out = []
    for a in amplitudes:
        v = 1 + a * np.cos(2 * np.pi * x / grid.length)
        out.append(DensityField(grid, v / (grid.h * v.sum())))
    return out


EEP_AMPLITUDES = tuple(round(0.1 * k, 10) for k in range(1, 10))
EEP_EXTENSION = tuple(round(0.05 + 0.1 * k, 10) for k in range(9))


def trig_family(grid: Grid, size: int, seed: int, modes: int = 3) -> list:
    """Random trigonometric probability densities, bounded below by 0.1 before normalising."""
    rng = np.random.default_rng(seed)
    x = grid.cell_centers / grid.length
    out = []
    for _ in range(size):
        coef = rng.uniform(-1, 1, modes) / np.arange(1, modes + 1)
        phase = rng.uniform(0, 2 * np.pi, modes)
        s = sum(c * np.cos(2 * np.pi * (k + 1) * x + p) for k, (c, p) in enumerate(zip(coef, phase)))
        if s.min() < -0.9:
            s = s * (0.9 / -s.min())
        v = 1 + s
        out.append(DensityField(grid, v / (grid.h * v.sum())))
    return out


def bump_pairs(grid: Grid, size: int, seed: int) -> list:
    """Pairs of bump-plus-background probability densities on the circle."""
    rng = np.random.default_rng(seed)
    x = grid.cell_centers / grid.length

    def member():
        c, w, weight = rng.uniform(0, 1), rng.uniform(0.05, 0.15), rng.uniform(0.3, 0.9)
        d = np.angle(np.exp(2j * np.pi * (x - c))) / (2 * np.pi)
        v = weight * np.exp(-0.5 * (d / w) ** 2)
        v = v / (grid.h * v.sum()) + (1 - weight) / grid.length
        return DensityField(grid, v / (grid.h * v.sum()))

    return [(member(), member()) for _ in range(size)]


# ----------------------------------------------------------------------------
# case workers (module level so they pickle)


def _dissipation_case(spec):
    model_spec, initial, n = spec["model"], spec["initial"], spec["n"]
    grid = Grid.circle(n)
    model = _model(model_spec)
    u0 = cfgmod.build_density(initial, grid)
    conf = SolverConfig(t_end=DISSIPATION_T_END, dt_init=1e-3, snapshot_every=2 * grid.h**2)
    traj = run(model, grid, u0, conf, FlowKind.SPHERICAL)
    res = dissipation_residuals(traj)
    ener = energy_residuals(traj)
    return [{
        "model": _label(model_spec), "n_cells": n, "steps": traj.steps,
        "max_residual": float(res.max()), "max_energy_residual": float(ener.max()),
        "entropy_increases": int(entropy_increases(traj).size),
        "entropy_final": float(traj.series("entropy")[-1]),
    }]


def _maxprinciple_case(spec):
    model_spec = spec["model"]
    grid = Grid.circle(MAXPRINCIPLE_CELLS)
    model = _model(model_spec)
    u0 = cfgmod.build_density({"expression": "1 + 0.5*cos(2*pi*x)", "normalize": 1.0}, grid)
    traj = run(model, grid, u0, SolverConfig(t_end=MAXPRINCIPLE_T_END, snapshot_every=0.01),
               FlowKind.SPHERICAL)
    mp = check_max_principle(traj, model, grid)
    mass = traj.series("mass")
    row = {
        "model": _label(model_spec), "n_cells": MAXPRINCIPLE_CELLS, "steps": traj.steps,
        "max_mass_error": float(np.max(np.abs(mass - 1))),
        "worst_violation": mp.worst_violation, "tolerance": mp.tolerance,
        "entropy_increases": int(entropy_increases(traj).size),
    }
    try:
        fit = fit_decay_rate(traj)
        row.update(gamma=fit.gamma, r_squared=fit.r_squared)
    except ValueError:
        row.update(gamma=math.nan, r_squared=math.nan)
    return [row]


def _eep_case(spec):
    model_spec, kind, family = spec["model"], spec["kind"], spec["family"]
    grid = Grid.circle(EEP_CELLS)
    model = _model(model_spec)
    amps = EEP_AMPLITUDES if family == "base" else EEP_AMPLITUDES + EEP_EXTENSION
    members = cosine_family(grid, amps)
    rows = []
    try:
        rep = eep_ratio_sweep(model, grid, members, kind)
    except CounterexampleError as exc:
        return [{"model": _label(model_spec), "kind": kind, "family": family, "a": math.nan,
                 "entropy": math.nan, "production": math.nan, "ratio": math.nan,
                 "error": str(exc)}]
    for i, r, e, d in zip(rep.cases, rep.ratios, rep.entropies, rep.productions):
        rows.append({"model": _label(model_spec), "kind": kind, "family": family, "a": amps[i],
                     "entropy": e, "production": d, "ratio": r, "error": ""})
    return rows


def _talagrand_case(spec):
    model_spec, kind, values, index = spec["model"], spec["kind"], spec["values"], spec["index"]
    grid = Grid.circle(TRANSPORT_CELLS)
    model = _model(model_spec)
    m = normalize_equilibrium(model, grid).m
    u0 = DensityField(grid, values)
    opts = SolverOpts(tol=spec["tol"], max_iters=spec["max_iters"])
    row = {"model": _label(model_spec), "kind": kind, "index": index, "n_time": spec["n_time"]}
    try:
        r = talagrand_check(model, grid, u0, kind, spec["n_time"], opts, equilibrium=m)
    except (TalagrandCounterexample, NonConvergenceError) as exc:
        row.update(lhs=math.nan, rhs=math.nan, ratio=math.nan, bound=math.nan,
                   within_bound=False, error=type(exc).__name__)
        return [row]
    row.update(lhs=r.lhs, rhs=r.rhs, ratio=r.ratio, bound=r.bound, within_bound=r.within_bound,
               error="")
    return [row]


def _ordering_case(spec):
    grid = Grid.circle(TRANSPORT_CELLS)
    rho0, rho1 = DensityField(grid, spec["rho0"]), DensityField(grid, spec["rho1"])
    opts = SolverOpts(tol=spec["tol"], max_iters=spec["max_iters"])
    row = {"pair": spec["index"]}
    try:
        rep = check_ordering(grid, rho0, rho1, TRANSPORT_TIME, opts)
    except NonConvergenceError as exc:
        row.update(HK=math.nan, HKS=math.nan, W2=math.nan, epsilon=math.nan, passed=False,
                   error=str(exc))
        return [row]
    row.update(HK=rep.distances["HK"], HKS=rep.distances["HKS"], W2=rep.distances["W2"],
               epsilon=rep.epsilon, passed=rep.passed, error="; ".join(rep.violations))
    return [row]


def _comparison_case(spec):
    model_spec, kind = spec["model"], spec["kind"]
    grid = Grid.circle(COMPARISON_CELLS)
    model = _model(model_spec)
    x = grid.cell_centers
    lower = DensityField(grid, 1 + 0.5 * np.cos(2 * np.pi * x))
    upper = DensityField(grid, lower.values + 0.2 + 0.1 * np.sin(4 * np.pi * x))
    rep = comparison_check(model, grid, lower, upper, COMPARISON_T_END, kind)
    return [{"model": _label(model_spec), "kind": kind, "worst_excess": rep.worst_excess,
             "steps": rep.steps, "passed": rep.passed}]


_WORKERS = {
    "dissipation": _dissipation_case,
    "maxprinciple": _maxprinciple_case,
    "eep": _eep_case,
    "logsobolev": _eep_case,
    "talagrand": _talagrand_case,
    "ordering": _ordering_case,
    "comparison": _comparison_case,
}


def run_case(spec):
    return _WORKERS[spec["suite"]](spec)


# ----------------------------------------------------------------------------
# suites


def _cases(name, cfg):
    seed = cfg["seed"]
    t = cfg["transport"]
    if name == "dissipation":
        sizes = [DISSIPATION_CELLS, 2 * DISSIPATION_CELLS] if cfg["verify"]["refine"] else [DISSIPATION_CELLS]
        return [{"suite": name, "model": cfg["model"], "initial": cfg["initial"], "n": n} for n in sizes]
    if name == "maxprinciple":
        return [{"suite": name, "model": F1}, {"suite": name, "model": F2}]
    if name == "eep":
        return [{"suite": name, "model": m, "kind": "spherical", "family": fam}
                for m in (F1, F2, F3) for fam in ("base", "extended")]
    if name == "logsobolev":
        return [{"suite": name, "model": m, "kind": "wasserstein", "family": fam}
                for m in (HEAT, F2) for fam in ("base", "extended")]
    if name == "talagrand":
        grid = Grid.circle(TRANSPORT_CELLS)
        family = trig_family(grid, cfg["verify"]["family_size"], seed)
        return [{"suite": name, "model": cfg["model"], "kind": kind, "index": i,
                 "values": u.values.tolist(), "n_time": TRANSPORT_TIME, "tol": t["tol"],
                 "max_iters": t["max_iters"]}
                for kind in ("HKS", "HK") for i, u in enumerate(family)]
    if name == "ordering":
        grid = Grid.circle(TRANSPORT_CELLS)
        pairs = bump_pairs(grid, cfg["verify"]["pairs"], seed)
        return [{"suite": name, "index": i, "rho0": a.values.tolist(), "rho1": b.values.tolist(),
                 "tol": t["tol"], "max_iters": t["max_iters"]} for i, (a, b) in enumerate(pairs)]
    if name == "comparison":
        return [{"suite": name, "model": m, "kind": k} for m in (F1, F2)
                for k in ("wasserstein", "conic")]
    raise ValueError(f"unknown suite {name!r}")


def _map(cases, jobs):
    if jobs <= 1 or len(cases) <= 1:
        return [run_case(c) for c in cases]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_case, cases))


COLUMNS = {
    "dissipation": ["model", "n_cells", "steps", "max_residual", "max_energy_residual",
                    "entropy_increases", "entropy_final"],
    "maxprinciple": ["model", "n_cells", "steps", "max_mass_error", "worst_violation", "tolerance",
                     "entropy_increases", "gamma", "r_squared"],
    "eep": ["model", "kind", "family", "a", "entropy", "production", "ratio", "error"],
    "logsobolev": ["model", "kind", "family", "a", "entropy", "production", "ratio", "error"],
    "talagrand": ["model", "kind", "index", "n_time", "lhs", "rhs", "ratio", "bound",
                  "within_bound", "error"],
    "ordering": ["pair", "HK", "HKS", "W2", "epsilon", "passed", "error"],
    "comparison": ["model", "kind", "worst_excess", "steps", "passed"],
}


def run_suite(name: str, cfg: dict, jobs: int = 1) -> SuiteResult:
    cases = _cases(name, cfg)
    results = _map(cases, jobs)
    out = SuiteResult(name, COLUMNS[name])
    for case, rows in zip(cases, results):
        out.rows.extend(rows)
    _judge(out, cases, results, cfg)
    return out


def _fail(out, key, ok, case=None):
    out.verdicts[key] = bool(out.verdicts.get(key, True) and ok)
    if not ok and case is not None:
        out.failures.append({"check": key, "case": case})


def _judge(out: SuiteResult, cases, results, cfg):
    name = out.name
    if name == "dissipation":
        base = results[0][0]
        _fail(out, "residual<=0.05", base["max_residual"] <= 0.05, cases[0])
        for case, rows in zip(cases, results):
            _fail(out, "entropy_monotone", rows[0]["entropy_increases"] == 0, case)
        if len(results) > 1:
            fine = results[1][0]
            _fail(out, "residual_decreases_under_refinement",
                  fine["max_residual"] < base["max_residual"], cases[1])
    elif name == "maxprinciple":
        for case, rows in zip(cases, results):
            r = rows[0]
            _fail(out, "mass<=1e-12", r["max_mass_error"] <= 1e-12, case)
            _fail(out, "f_band", r["worst_violation"] <= r["tolerance"], case)
            _fail(out, "entropy_monotone", r["entropy_increases"] == 0, case)
            if case["model"] == F1:
                _fail(out, "decay_fit", r["gamma"] > 0 and r["r_squared"] >= 0.99, case)
    elif name in ("eep", "logsobolev"):
        sups = {}
        for case, rows in zip(cases, results):
            errs = [r for r in rows if r["error"]]
            _fail(out, "no_counterexample", not errs, case)
            ratios = [r["ratio"] for r in rows if not r["error"]]
            _fail(out, "ratios_finite", bool(ratios) and all(math.isfinite(v) for v in ratios), case)
            if ratios:
                sups[(_label(case["model"]), case["family"])] = max(ratios)
        for (label, fam), sup in sorted(sups.items()):
            if fam != "base":
                continue
            ext = sups.get((label, "extended"))
            if ext is not None:
                change = abs(ext - sup) / sup
                out.notes[f"sup[{label}]"] = sup
                out.notes[f"sup_change[{label}]"] = change
                _fail(out, "sup_stable", change < SUP_STABILITY, {"model": label})
        if name == "logsobolev":
            sharp = 1 / (8 * math.pi**2)
            heat = sups.get((_label(HEAT), "extended"))
            out.notes["sharp_constant"] = sharp
            _fail(out, "heat_sharp_constant", heat is not None and heat <= sharp * (1 + BOUND_SLACK),
                  {"model": _label(HEAT)})
    elif name == "talagrand":
        by_kind = {}
        for case, rows in zip(cases, results):
            r = rows[0]
            _fail(out, "solved", not r["error"], case)
            _fail(out, f"bound_{r['kind']}", bool(r["within_bound"]), case)
            if math.isfinite(r["ratio"]):
                by_kind.setdefault(r["kind"], []).append((r["ratio"], case))
            elif not r["error"] and r["rhs"] > 0:
                _fail(out, "ratios_finite", False, case)
        for kind, items in sorted(by_kind.items()):
            sup, case = max(items, key=lambda it: it[0])
            refined = dict(case, n_time=2 * case["n_time"])
            r2 = run_case(refined)[0]
            change = abs(r2["ratio"] - sup) / sup if math.isfinite(r2["ratio"]) else math.inf
            out.notes[f"sup[{kind}]"] = sup
            out.notes[f"sup_refined[{kind}]"] = r2["ratio"]
            out.rows.append(r2)
            _fail(out, "sup_stable", change < SUP_STABILITY, refined)
        _fail(out, "ratios_finite", bool(by_kind))
    elif name == "ordering":
        for case, rows in zip(cases, results):
            _fail(out, "ordering", bool(rows[0]["passed"]), case)
    elif name == "comparison":
        for case, rows in zip(cases, results):
            _fail(out, "ordered", bool(rows[0]["passed"]), case)
