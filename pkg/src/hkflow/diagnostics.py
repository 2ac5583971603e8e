"""Entropy, energy and production functionals, and numerical checks of the
identities and inequalities they satisfy along the flows."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .entropy import EntropyModel, entropy_density, psi
from .fields import DensityField
from .flow import FlowKind, Trajectory, _advance, _phi, _values, flux_faces, \
    reaction, stable_dt
from .grid import Grid, average_faces, face_neighbours, gradient_faces

EQUILIBRIUM_SKIP = 1e-14


class CounterexampleError(AssertionError):
    """Zero production at a state with clearly positive entropy."""


@dataclass(frozen=True)
class DiagnosticRecord:
    t: float
    entropy: float
    energy: float
    production: float
    fbar: float
    mass: float
    min_f: float
    max_f: float
    energy_rate: float = math.nan


def entropy_total(model: EntropyModel, grid: Grid, u) -> float:
    u = _values(u)
    return float(grid.h * np.sum(entropy_density(model, grid.cell_centers, u)))


def energy_total(model: EntropyModel, grid: Grid, u) -> float:
    u = _values(u)
    return float(grid.h * np.sum(psi(model, grid.cell_centers, u)))


def fbar(model: EntropyModel, grid: Grid, u) -> float:
    u = _values(u)
    return float(grid.h * np.sum(model.uf(grid.cell_centers, u)))


def gradient_dissipation(model: EntropyModel, grid: Grid, u) -> float:
    """``int u |grad f|^2`` assembled as ``sum F^2 / u_face`` from the solver flux."""
    u = _values(u)
    F = flux_faces(model, grid, u)
    uf = average_faces(grid, u)
    with np.errstate(all="ignore"):
        dens = np.where(uf > 0, F * F / uf, 0.0)
    if not grid.periodic:
        dens[0] = dens[-1] = 0.0
    return float(grid.h * dens.sum())


def _weighted_square(model, grid, u, center: float | None):
    x = grid.cell_centers
    pos = u > 0
    with np.errstate(all="ignore"):
        f = np.where(pos, model.f(x, np.where(pos, u, 1.0)), 0.0)
    if center is None:
        center = float(np.sum(u * f) / np.sum(u))
    return float(grid.h * np.sum(np.where(pos, u * (f - center) ** 2, 0.0)))


def entropy_production(model: EntropyModel, grid: Grid, u, kind: FlowKind) -> float:
    u = _values(u)
    kind = FlowKind(kind)
    if kind is FlowKind.FITNESS:
        u = u / (u.sum() * grid.h)
        kind = FlowKind.SPHERICAL
    grad = gradient_dissipation(model, grid, u)
    if kind is FlowKind.WASSERSTEIN:
        return grad
    if kind is FlowKind.CONIC:
        return grad + _weighted_square(model, grid, u, 0.0)
    return grad + _weighted_square(model, grid, u, None)


def energy_rate(model: EntropyModel, grid: Grid, u, kind: FlowKind) -> float:
    """Right-hand side of the energy identity from the discrete operators:

    ``-sum |grad Phi|^2 + sum (drift . grad Phi) + sum R Phi``.
    """
    u = _values(u)
    kind = FlowKind(kind)
    x = grid.cell_centers
    P = _phi(model, x, u)
    gP = gradient_faces(grid, P)
    F = flux_faces(model, grid, u)
    drift = gP - F
    R = reaction(model, grid, u, kind)
    return float(grid.h * (-np.sum(gP * gP) + np.sum(drift * gP) + np.sum(R * P)))


def record(model: EntropyModel, grid: Grid, u, kind: FlowKind, t: float) -> DiagnosticRecord:
    u = _values(u)
    kind = FlowKind(kind)
    mass = float(grid.h * u.sum())
    prof = u / mass if kind is FlowKind.FITNESS else u
    with np.errstate(all="ignore"):
        f = model.f(grid.cell_centers, prof)
    return DiagnosticRecord(
        t=float(t),
        entropy=entropy_total(model, grid, prof),
        energy=energy_total(model, grid, prof) if model.integrable_at_zero else math.nan,
        production=entropy_production(model, grid, prof, kind),
        fbar=fbar(model, grid, prof),
        mass=mass,
        min_f=float(np.min(f)),
        max_f=float(np.max(f)),
        energy_rate=energy_rate(model, grid, u, kind) if kind is not FlowKind.FITNESS else math.nan,
    )


# ----------------------------------------------------------------------------
# decay


@dataclass(frozen=True)
class DecayFit:
    gamma: float
    r_squared: float
    n_points: int


def fit_decay_rate(traj: Trajectory, tail_fraction: float = 0.5, floor: float = 1e-14) -> DecayFit:
    """Least-squares rate of ``log entropy`` over the tail of the usable snapshots."""
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    t = np.asarray(traj.times, dtype=float)
    e = traj.series("entropy")
    usable = np.flatnonzero(e > floor)
    if usable.size:
        # stop at the first snapshot that reached the floor
        cut = np.flatnonzero(e <= floor)
        if cut.size:
            usable = usable[usable < cut[0]]
    k = int(math.ceil(tail_fraction * usable.size))
    if k < 10:
        raise ValueError(f"need >= 10 snapshots with entropy > {floor:g} in the tail, have {k}")
    idx = usable[-k:]
    fit = stats.linregress(t[idx], np.log(e[idx]))
    return DecayFit(gamma=-float(fit.slope), r_squared=float(fit.rvalue**2), n_points=k)


def dissipation_residuals(traj: Trajectory) -> np.ndarray:
    """``|dE/dt + D| / max(D, 1e-8)`` between consecutive snapshots (trapezoid in D)."""
    t = np.asarray(traj.times, dtype=float)
    e = traj.series("entropy")
    d = traj.series("production")
    dmid = 0.5 * (d[1:] + d[:-1])
    slope = np.diff(e) / np.diff(t)
    return np.abs(slope + dmid) / np.maximum(dmid, 1e-8)


def energy_residuals(traj: Trajectory) -> np.ndarray:
    t = np.asarray(traj.times, dtype=float)
    w = traj.series("energy")
    r = traj.series("energy_rate")
    rmid = 0.5 * (r[1:] + r[:-1])
    slope = np.diff(w) / np.diff(t)
    return np.abs(slope - rmid) / np.maximum(np.abs(rmid), 1e-8)


def entropy_increases(traj: Trajectory, slack: float = 1e-10) -> np.ndarray:
    """Indices ``k`` with ``E[k+1] > E[k] + slack``."""
    e = traj.series("entropy")
    return np.flatnonzero(np.diff(e) > slack)


# ----------------------------------------------------------------------------
# inequalities


@dataclass
class InequalityReport:
    ratios: list
    sup_ratio: float
    argmax_case: int | None
    tolerance_notes: str = ""
    entropies: list = field(default_factory=list)
    productions: list = field(default_factory=list)
    cases: list = field(default_factory=list)


def eep_ratio_sweep(model: EntropyModel, grid: Grid, family, kind: FlowKind) -> InequalityReport:
    """Ratios ``E(u) / D(u)`` over a family; equilibrium members are skipped."""
    kind = FlowKind(kind)
    ratios, ents, prods, cases, skipped = [], [], [], [], []
    for i, member in enumerate(family):
        u = _values(member)
        if kind in (FlowKind.SPHERICAL, FlowKind.WASSERSTEIN):
            mass = grid.h * u.sum()
            if abs(mass - 1) > 1e-8:
                raise ValueError(f"member {i} has mass {mass!r}, expected 1")
        E = entropy_total(model, grid, u)
        D = entropy_production(model, grid, u, kind)
        if D < EQUILIBRIUM_SKIP:
            if E > 1e-10:
                raise CounterexampleError(
                    f"member {i}: production {D:.3e} with entropy {E:.3e}")
            skipped.append(i)
            continue
        ratios.append(E / D)
        ents.append(E)
        prods.append(D)
        cases.append(i)
    if ratios:
        j = int(np.argmax(ratios))
        sup, arg = float(ratios[j]), cases[j]
    else:
        sup, arg = 0.0, None
    notes = f"skipped as equilibrium: {skipped}" if skipped else ""
    return InequalityReport(ratios, sup, arg, notes, ents, prods, cases)


def pythagorean_gap(model: EntropyModel, grid: Grid, u, a: float) -> float:
    """``int u (f - a)^2 - [int u (f - fbar)^2 + (fbar - a)^2]`` for a probability ``u``."""
    u = _values(u)
    fb = fbar(model, grid, u)
    return _weighted_square(model, grid, u, a) - (_weighted_square(model, grid, u, fb) + (fb - a) ** 2)


# ----------------------------------------------------------------------------
# max / comparison principles


@dataclass(frozen=True)
class MaxPrincipleReport:
    passed: bool
    worst_violation: float
    tolerance: float
    band: tuple
    worst_time: float


def check_max_principle(traj: Trajectory, model: EntropyModel, grid: Grid) -> MaxPrincipleReport:
    """Does ``f(x, u(t))`` stay in the band of ``f(x, u0)`` up to ``10 h^2 Lip(f)``?"""
    x = grid.cell_centers
    with np.errstate(all="ignore"):
        f0 = model.f(x, traj.snapshots[0].values)
    lo, hi = float(np.min(f0)), float(np.max(f0))
    with np.errstate(all="ignore"):
        slopes = np.abs(gradient_faces(grid, f0))
    lip = float(np.max(slopes[np.isfinite(slopes)])) if np.any(np.isfinite(slopes)) else 0.0
    tol = 10 * grid.h**2 * lip + 1e-12
    worst, when = 0.0, 0.0
    for t, snap in zip(traj.times, traj.snapshots):
        with np.errstate(all="ignore"):
            f = model.f(x, snap.values)
        v = max(lo - float(np.min(f)), float(np.max(f)) - hi, 0.0)
        if not math.isfinite(v) and not (math.isinf(lo) or math.isinf(hi)):
            v = math.inf
        if v > worst:
            worst, when = v, t
    return MaxPrincipleReport(worst <= tol, worst, tol, (lo, hi), when)


@dataclass(frozen=True)
class ComparisonReport:
    passed: bool
    worst_excess: float
    steps: int


def comparison_check(model: EntropyModel, grid: Grid, lower: DensityField, upper: DensityField,
                     t_end: float, kind: FlowKind, cfl: float = 0.45, tol: float = 1e-12,
                     max_steps: int = 10**7) -> ComparisonReport:
    """Run two ordered initial states in lockstep and track ``max(u_lo - u_hi)``."""
    kind = FlowKind(kind)
    if kind not in (FlowKind.WASSERSTEIN, FlowKind.CONIC):
        raise ValueError("comparison principle is checked for wasserstein and conic flows")
    a, b = np.array(_values(lower)), np.array(_values(upper))
    if np.any(a > b):
        raise ValueError("initial data are not ordered")
    t, steps, worst = 0.0, 0, 0.0
    scale = max(1.0, float(b.max()))
    while t < t_end and steps < max_steps:
        dt = min(stable_dt(model, grid, a, kind, cfl), stable_dt(model, grid, b, kind, cfl), t_end - t)
        a, _ = _advance(model, grid, a, dt, kind)
        b, _ = _advance(model, grid, b, dt, kind)
        t += dt
        steps += 1
        worst = max(worst, float(np.max(a - b)))
    return ComparisonReport(worst <= tol * scale, worst, steps)
