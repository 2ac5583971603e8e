"""Explicit finite-volume integration of the entropy gradient flows.

All kinds share one conservative flux, written in the form that stays
meaningful at vacuum,

    F = grad Phi(x, u) - Phi_x(x, u) - u f_x(x, u)        (so that F = -u grad f),

and ``du/dt = div F + R`` with the reaction ``R``:

=============  ================================================
spherical      ``u (f - fbar)``, ``fbar = int u f / int u``
conic          ``u f``
wasserstein    ``0``
fitness        ``U f(x, U / M)`` with transport ``M F(U / M)``
=============  ================================================

The fitness kind is the population model whose normalised profile follows the
spherical flow; the conic kind is the local conic gradient flow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .entropy import DomainError, EntropyModel, phi as _phi_checked
from .fields import DensityField
from .grid import Grid, divergence_cells, face_neighbours, gradient_faces, reconstruct_faces, \
    zero_walls

log = logging.getLogger(__name__)

REJECT_BELOW = -1e-13


class FlowKind(str, Enum):
    SPHERICAL = "spherical"
    CONIC = "conic"
    WASSERSTEIN = "wasserstein"
    FITNESS = "fitness"


class StepRejected(ArithmeticError):
    def __init__(self, msg, min_value):
        super().__init__(msg)
        self.min_value = min_value


class StiffnessError(RuntimeError):
    def __init__(self, msg, last_state, trajectory=None):
        super().__init__(msg)
        self.last_state = last_state
        self.trajectory = trajectory


@dataclass
class SolverConfig:
    t_end: float
    dt_init: float = 1e-3
    cfl_safety: float = 0.45
    snapshot_every: float | None = None
    positivity_floor: float = 0.0
    adaptive: bool = True

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not self.dt_init > 0:
            raise ValueError("dt_init must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.snapshot_every is None:
            self.snapshot_every = self.t_end / 100
        if not self.snapshot_every > 0:
            raise ValueError("snapshot_every must be positive")


@dataclass
class Trajectory:
    kind: FlowKind
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    steps: int = 0
    rejections: int = 0
    clipped_mass: float = 0.0

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.diagnostics])


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, DensityField) else np.asarray(u, dtype=float)


def _phi(model: EntropyModel, x, u):
    if model.closed_forms is not None and model.closed_forms.phi is not None:
        return model.closed_forms.phi(x, u)
    return _phi_checked(model, x, u)


def flux_faces(model: EntropyModel, grid: Grid, u) -> np.ndarray:
    """Face flux ``F ~ -u grad f``.

    The diffusive part ``grad Phi`` is centred; the drift ``u f_x`` takes the
    limited reconstruction of ``u`` from the side the drift comes from.
    """
    u = _values(u)
    if not model.integrable_at_zero:
        raise DomainError(f"{model.name}: flux needs a finite Phi, unavailable for this model")
    x = grid.cell_centers
    xf = grid.face_positions
    with np.errstate(all="ignore"):
        F = gradient_faces(grid, _phi(model, x, u))
        left, right = face_neighbours(grid, u)
        px = model.phi_x(x, u)
        pl, pr = face_neighbours(grid, px)
        F = F - 0.5 * (pl + pr)
        speed = model.f_x(xf, 0.5 * (left + right))
        if np.any(speed != 0):
            rec_left, rec_right = reconstruct_faces(grid, u)
            upwind = np.where(speed > 0, rec_left, rec_right)
            F = F - model.ufx(xf, upwind)
    if not np.all(np.isfinite(F)):
        raise FloatingPointError(f"{model.name}: non-finite flux")
    F[(left == 0) & (right == 0)] = 0.0
    return zero_walls(grid, F)


def reaction(model: EntropyModel, grid: Grid, u, kind: FlowKind) -> np.ndarray:
    u = _values(u)
    kind = FlowKind(kind)
    if kind is FlowKind.WASSERSTEIN:
        return np.zeros_like(u)
    x = grid.cell_centers
    if kind is FlowKind.FITNESS:
        M = u.sum() * grid.h
        return M * model.uf(x, u / M)
    uf = model.uf(x, u)
    if kind is FlowKind.CONIC:
        return uf
    # the same midpoint sums as the mass, so sum(R) vanishes identically
    fbar = uf.sum() / u.sum()
    return uf - u * fbar


def rate(model: EntropyModel, grid: Grid, u, kind: FlowKind) -> np.ndarray:
    u = _values(u)
    kind = FlowKind(kind)
    if kind is FlowKind.FITNESS:
        M = u.sum() * grid.h
        transport = M * divergence_cells(grid, flux_faces(model, grid, u / M))
    else:
        transport = divergence_cells(grid, flux_faces(model, grid, u))
    return transport + reaction(model, grid, u, kind)


def _advance(model, grid, u, dt, kind):
    new = u + dt * rate(model, grid, u, kind)
    low = new.min()
    if low < REJECT_BELOW:
        raise StepRejected(f"negative density {low:.3e} after dt={dt:.3e}", low)
    defect = 0.0
    if low < 0:
        neg = new < 0
        defect = float(-new[neg].sum() * grid.h)
        new[neg] = 0.0
    return new, defect


def step(model: EntropyModel, grid: Grid, u, dt: float, kind: FlowKind) -> DensityField:
    """One forward Euler step; raises :class:`StepRejected` on a genuine negative."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    new, defect = _advance(model, grid, _values(u), dt, FlowKind(kind))
    if defect:
        log.debug("clipped %.3e mass at roundoff level", defect)
    return DensityField(grid, new)


def stable_dt(model: EntropyModel, grid: Grid, u, kind: FlowKind, cfl: float = 0.45) -> float:
    """Explicit-step bound from diffusion, drift and reaction."""
    u = _values(u)
    kind = FlowKind(kind)
    x = grid.cell_centers
    prof = u / (u.sum() * grid.h) if kind is FlowKind.FITNESS else u
    with np.errstate(all="ignore"):
        diff = float(np.max(model.phi_u(x, prof)))
        left, right = face_neighbours(grid, prof)
        drift = float(np.max(np.abs(model.f_x(grid.face_positions, 0.5 * (left + right)))))
    bounds = [grid.h**2 / diff if diff > 0 else math.inf]
    if drift > 0:
        bounds.append(grid.h / drift)
    if kind is not FlowKind.WASSERSTEIN:
        pos = prof > 0
        with np.errstate(all="ignore"):
            f = model.f(x[pos], prof[pos])
        if kind is FlowKind.SPHERICAL:
            f = f - float(np.sum(model.uf(x, prof)) / prof.sum())
        react = float(np.max(np.abs(f))) if f.size else 0.0
        if react > 0:
            bounds.append(1.0 / react)
    return cfl * min(bounds)


def _check_initial(u0: DensityField, kind: FlowKind):
    if kind in (FlowKind.SPHERICAL, FlowKind.WASSERSTEIN) and abs(u0.mass - 1.0) > 1e-10:
        raise ValueError(f"{kind.value} runs need unit initial mass, got {u0.mass!r}")
    if kind in (FlowKind.CONIC, FlowKind.FITNESS) and not u0.mass > 0:
        raise ValueError("initial mass must be positive")


def run(model: EntropyModel, grid: Grid, u0: DensityField, config: SolverConfig,
        kind: FlowKind) -> Trajectory:
    from .diagnostics import record

    kind = FlowKind(kind)
    _check_initial(u0, kind)
    traj = Trajectory(kind=kind)
    u = np.array(u0.values, dtype=float)
    t = 0.0
    traj.times.append(0.0)
    traj.snapshots.append(u0)
    traj.diagnostics.append(record(model, grid, u, kind, 0.0))

    n_snap = max(1, int(round(config.t_end / config.snapshot_every)))
    snap_times = [config.t_end * (k + 1) / n_snap for k in range(n_snap)]
    dt_cur = config.dt_init
    streak = 0
    dt_min = 1e-14 * config.t_end
    for target in snap_times:
        while t < target:
            remaining = target - t
            bound = stable_dt(model, grid, u, kind, config.cfl_safety) if config.adaptive else math.inf
            dt = min(dt_cur, bound)
            last = dt >= remaining * (1 - 1e-12)
            if last:
                dt = remaining
            try:
                u_new, defect = _advance(model, grid, u, dt, kind)
            except StepRejected:
                traj.rejections += 1
                if not config.adaptive:
                    raise
                dt_cur = dt / 2
                streak = 0
                if dt_cur < dt_min:
                    raise StiffnessError(
                        f"dt underflow at t={t:.6g}", DensityField(grid, np.maximum(u, 0)), traj
                    ) from None
                continue
            u = u_new
            t = target if last else t + dt
            traj.steps += 1
            if defect:
                traj.clipped_mass += defect
                log.debug("t=%.6g clipped %.3e mass", t, defect)
            streak += 1
            if config.adaptive and streak >= 20:
                dt_cur = min(2 * dt_cur, config.dt_init)
                streak = 0
        traj.times.append(target)
        traj.snapshots.append(DensityField(grid, u))
        traj.diagnostics.append(record(model, grid, u, kind, target))
    return traj


@dataclass
class MassRecovery:
    times: np.ndarray
    M: np.ndarray
    U: list


def mass_recovery(model: EntropyModel, grid: Grid, traj: Trajectory, M0: float) -> MassRecovery:
    """``M(t) = M0 exp(int_0^t fbar)`` by the trapezoid rule and ``U = M u``."""
    if not M0 > 0:
        raise ValueError("M0 must be positive")
    if FlowKind(traj.kind) is not FlowKind.SPHERICAL:
        raise ValueError("mass recovery needs a spherical trajectory")
    if len(traj.diagnostics) != len(traj.times) or len(traj.times) == 0:
        raise ValueError("trajectory has no fbar records")
    t = np.asarray(traj.times, dtype=float)
    fbar = traj.series("fbar")
    if np.any(~np.isfinite(fbar)):
        raise ValueError("trajectory has missing fbar records")
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (fbar[1:] + fbar[:-1]) * np.diff(t))))
    M = M0 * np.exp(cum)
    U = [s.scaled(Mk) for s, Mk in zip(traj.snapshots, M)]
    return MassRecovery(times=t, M=M, U=U)
