"""Fitness nonlinearities ``f(x, u)`` and the functionals derived from them.

For a model with ``f_u < 0`` we use

* ``Phi(x, u) = -int_0^u s f_u(x, s) ds``   (diffusion potential, ``Phi_u = -u f_u``)
* ``Psi(x, u) = int_0^u Phi(x, s) ds``       (energy density)
* ``E(x, u) = -int_m^u f(x, s) ds``          (relative entropy density)

where ``m`` solves ``f(x, m(x)) = 0`` after the additive normalisation of ``f``.
Built-in models carry closed forms; anything else goes through adaptive
quadrature.  The normalising constant is stored as ``shift`` rather than folded
into ``f``, so ``f = f_raw - shift``.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate as sp_integrate
from scipy.special import xlogy

from .fields import DensityField
from .grid import Grid, integrate

Fn = Callable[[np.ndarray, np.ndarray], np.ndarray]

QUAD_TOL = 1e-10
QUAD_LIMIT = 2**10
LEVEL_TOL = 1e-12


class DomainError(ValueError):
    """Evaluation requested outside the model's validity range."""


class RangeError(ValueError):
    """A level ``f(x, u) = c`` has no positive solution at some node."""


class ModelError(RuntimeError):
    """The equilibrium cannot be normalised on the validity range."""


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ClosedForms:
    """Exact primitives.  ``antiderivative`` is any u-primitive of the *raw* f."""

    antiderivative: Fn
    phi: Fn
    phi_x: Fn
    psi: Fn


@dataclass(frozen=True, eq=False)
class EntropyModel:
    name: str
    f_raw: Fn
    f_u: Fn
    f_x: Fn
    u_valid: tuple[float, float] = (0.0, math.inf)
    shift: float = 0.0
    closed_forms: ClosedForms | None = None
    f_xu: Fn | None = None
    # False when Phi/Psi diverge at u = 0 (power law with alpha <= -1)
    integrable_at_zero: bool = True
    params: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def f(self, x, u):
        return self.f_raw(x, u) - self.shift

    def shifted(self, shift: float) -> "EntropyModel":
        return replace(self, shift=float(shift), _cache={}, _lock=threading.Lock())

    def uf(self, x, u):
        """``u * f`` with the value 0 at vacuum."""
        u = np.asarray(u, dtype=float)
        pos = u > 0
        safe = np.where(pos, u, 1.0)
        with np.errstate(all="ignore"):
            val = u * self.f(x, safe)
        return np.where(pos, val, 0.0)

    def ufx(self, x, u):
        u = np.asarray(u, dtype=float)
        pos = u > 0
        safe = np.where(pos, u, 1.0)
        with np.errstate(all="ignore"):
            val = u * self.f_x(x, safe)
        return np.where(pos, val, 0.0)

    def phi_u(self, x, u, floor: float = 1e-12):
        """``-u f_u``; at vacuum the value at ``u = floor`` is used."""
        u = np.maximum(np.asarray(u, dtype=float), floor)
        return -u * self.f_u(x, u)

    def phi_x(self, x, u):
        if self.closed_forms is not None:
            return np.broadcast_to(self.closed_forms.phi_x(x, u), np.broadcast(x, u).shape) * 1.0
        return _vectorized(self, "phi_x", x, u, _quad_phi_x)

    def equilibrium(self, x) -> np.ndarray:
        """Pointwise ``m(x)`` with ``f(x, m(x)) = 0``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        key = ("m", x.tobytes())
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        m, status = _solve_level(self, x, 0.0)
        if np.any(status != 0):
            bad = int(np.flatnonzero(status)[0])
            raise RangeError(f"{self.name}: no equilibrium at x={x[bad]:.6g}")
        with self._lock:
            self._cache[key] = m
        return m


# ----------------------------------------------------------------------------
# built-in models


def make_power_law(alpha: float) -> EntropyModel:
    """``f(x, u) = (1 - u**alpha) / alpha``."""
    alpha = float(alpha)
    if alpha == 0 or not math.isfinite(alpha):
        raise ValueError("alpha must be a finite nonzero real")
    a = alpha

    def f_raw(x, u):
        return (1.0 - np.power(u, a)) / a

    def f_u(x, u):
        return -np.power(u, a - 1.0)

    def zero(x, u):
        return np.zeros(np.broadcast(x, u).shape)

    if a == -1.0:
        def antiderivative(x, u):
            return np.log(u) - u
    else:
        def antiderivative(x, u):
            return u / a - np.power(u, a + 1.0) / (a * (a + 1.0))

    integrable = a > -1.0
    if integrable:
        def phi(x, u):
            return np.power(u, a + 1.0) / (a + 1.0)

        def psi(x, u):
            return np.power(u, a + 2.0) / ((a + 1.0) * (a + 2.0))
    else:
        phi = psi = None

    closed = ClosedForms(antiderivative, phi, zero, psi)
    return EntropyModel(
        name=f"power_law(alpha={a:g})",
        f_raw=f_raw,
        f_u=f_u,
        f_x=zero,
        f_xu=zero,
        u_valid=(0.0, math.inf) if integrable else (1e-12, math.inf),
        closed_forms=closed,
        integrable_at_zero=integrable,
        params={"model": "power_law", "alpha": a},
    )


def make_log_potential(V=None, dV=None) -> EntropyModel:
    """``f(x, u) = -log u - V(x)``.

    ``V`` is a callable of ``x`` (an :class:`~hkflow.expr.Expression` supplies its
    own derivative); ``None`` means ``V = 0``.
    """
    if V is None:
        def V(x):
            return np.zeros_like(np.asarray(x, dtype=float))

        def dV(x):
            return np.zeros_like(np.asarray(x, dtype=float))
    elif dV is None:
        if hasattr(V, "derivative"):
            dV = V.derivative
        else:
            def dV(x, _V=V, _d=1e-6):
                x = np.asarray(x, dtype=float)
                return (_V(x + _d) - _V(x - _d)) / (2 * _d)

    V, dV = _memo_x(V), _memo_x(dV)

    def f_raw(x, u):
        return -np.log(u) - V(x)

    def f_u(x, u):
        return -1.0 / np.asarray(u, dtype=float)

    def f_x(x, u):
        return np.broadcast_to(-dV(x), np.broadcast(x, u).shape) * 1.0

    def zero(x, u):
        return np.zeros(np.broadcast(x, u).shape)

    def antiderivative(x, u):
        return -(xlogy(u, u) - u) - V(x) * u

    def phi(x, u):
        return np.asarray(u, dtype=float) * np.ones(np.broadcast(x, u).shape)

    def psi(x, u):
        return 0.5 * np.asarray(u, dtype=float) ** 2 * np.ones(np.broadcast(x, u).shape)

    src = getattr(V, "source", None)
    return EntropyModel(
        name="log_potential" + (f"(V={src})" if src else ""),
        f_raw=f_raw,
        f_u=f_u,
        f_x=f_x,
        f_xu=zero,
        closed_forms=ClosedForms(antiderivative, phi, zero, psi),
        params={"model": "log_potential", "potential": src},
    )


def _memo_x(fn, size=32):
    """Cache a function of position only; the flows re-evaluate it on fixed grids."""
    cache: dict = {}
    lock = threading.Lock()

    def wrapped(x):
        x = np.asarray(x, dtype=float)
        key = (x.shape, x.tobytes())
        with lock:
            hit = cache.get(key)
        if hit is None:
            hit = np.array(np.asarray(fn(x), dtype=float) * np.ones(x.shape), copy=True)
            hit.flags.writeable = False
            with lock:
                if len(cache) >= size:
                    cache.pop(next(iter(cache)))
                cache[key] = hit
        return hit

    wrapped.source = getattr(fn, "source", None)
    return wrapped


_HALF_LOG2 = 0.5 * math.log(2.0)


def make_arctangential() -> EntropyModel:
    """``f(x, u) = -log(u / sqrt(1 + u^2)) - log(2) / 2``."""

    def f_raw(x, u):
        u = np.asarray(u, dtype=float)
        return -np.log(u) + 0.5 * np.log1p(u * u) - _HALF_LOG2

    def f_u(x, u):
        u = np.asarray(u, dtype=float)
        return -1.0 / (u * (1.0 + u * u))

    def zero(x, u):
        return np.zeros(np.broadcast(x, u).shape)

    def antiderivative(x, u):
        u = np.asarray(u, dtype=float)
        return -xlogy(u, u) + 0.5 * u * np.log1p(u * u) + np.arctan(u) - _HALF_LOG2 * u

    def phi(x, u):
        return np.arctan(u) * np.ones(np.broadcast(x, u).shape)

    def psi(x, u):
        u = np.asarray(u, dtype=float)
        return (u * np.arctan(u) - 0.5 * np.log1p(u * u)) * np.ones(np.broadcast(x, u).shape)

    return EntropyModel(
        name="arctangential",
        f_raw=f_raw,
        f_u=f_u,
        f_x=zero,
        f_xu=zero,
        closed_forms=ClosedForms(antiderivative, phi, zero, psi),
        params={"model": "arctangential"},
    )


def make_generic(name: str, f: Fn, f_u: Fn, f_x: Fn, f_xu: Fn | None = None,
                 u_valid=(0.0, math.inf)) -> EntropyModel:
    """A model without closed forms; every primitive is evaluated by quadrature."""
    return EntropyModel(name=name, f_raw=f, f_u=f_u, f_x=f_x, f_xu=f_xu, u_valid=tuple(u_valid))


# ----------------------------------------------------------------------------
# quadrature route


def _quad(fn, a, b, what):
    with warnings.catch_warnings():
        warnings.simplefilter("error", sp_integrate.IntegrationWarning)
        try:
            val, err = sp_integrate.quad(fn, a, b, epsabs=QUAD_TOL, epsrel=1e-13, limit=QUAD_LIMIT)
        except sp_integrate.IntegrationWarning as exc:
            raise QuadratureError(f"{what} on [{a:.6g}, {b:.6g}] did not converge: {exc}") from None
    if not math.isfinite(val):
        raise QuadratureError(f"{what} on [{a:.6g}, {b:.6g}] is not finite")
    return val


def _quad_phi(model, x, u):
    if u == 0:
        return 0.0
    return _quad(lambda s: -s * float(model.f_u(x, s)), 0.0, u, "Phi")


def _quad_psi(model, x, u):
    # Cauchy's repeated-integral formula collapses the double integral
    if u == 0:
        return 0.0
    return _quad(lambda s: -(u - s) * s * float(model.f_u(x, s)), 0.0, u, "Psi")


def _f_xu(model, x, s):
    if model.f_xu is not None:
        return float(model.f_xu(x, s))
    d = 1e-6
    return (float(model.f_u(x + d, s)) - float(model.f_u(x - d, s))) / (2 * d)


def _quad_phi_x(model, x, u):
    if u == 0:
        return 0.0
    return _quad(lambda s: -s * _f_xu(model, x, s), 0.0, u, "Phi_x")


def _quad_entropy(model, x, u):
    m = float(model.equilibrium(np.array([x]))[0])
    if u == m:
        return 0.0
    return -_quad(lambda s: float(model.f(x, s)), m, u, "E")


def _vectorized(model, tag, x, u, scalar_fn):
    x, u = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(u, dtype=float))
    out = np.empty(x.shape)
    for idx in np.ndindex(x.shape):
        key = (tag, model.shift, float(x[idx]), float(u[idx]))
        with model._lock:
            hit = model._cache.get(key)
        if hit is None:
            hit = scalar_fn(model, float(x[idx]), float(u[idx]))
            with model._lock:
                model._cache[key] = hit
        out[idx] = hit
    return out


def quad_phi(model, x, u):
    _require_integrable(model)
    return _vectorized(model, "phi", x, u, _quad_phi)


def quad_psi(model, x, u):
    _require_integrable(model)
    return _vectorized(model, "psi", x, u, _quad_psi)


def quad_entropy_density(model, x, u):
    _check_u(model, u, strict_entropy=True)
    return _vectorized(model, "E", x, u, _quad_entropy)


# ----------------------------------------------------------------------------
# public operations


def _require_integrable(model):
    if not model.integrable_at_zero:
        raise DomainError(f"{model.name}: Phi and Psi diverge at u = 0")


def _check_u(model, u, strict_entropy=False):
    u = np.asarray(u, dtype=float)
    lo, hi = model.u_valid
    if np.any(~np.isfinite(u)) or np.any(u < 0) or np.any(u >= hi):
        raise DomainError(f"{model.name}: u outside [0, {hi})")
    if strict_entropy and lo > 0 and np.any(u < lo):
        raise DomainError(f"{model.name}: E diverges for u < {lo:g}")
    return u


def phi(model: EntropyModel, x, u):
    _require_integrable(model)
    u = _check_u(model, u)
    if model.closed_forms is not None:
        return np.broadcast_to(model.closed_forms.phi(x, u), np.broadcast(x, u).shape) * 1.0
    return quad_phi(model, x, u)


def psi(model: EntropyModel, x, u):
    _require_integrable(model)
    u = _check_u(model, u)
    if model.closed_forms is not None:
        return np.broadcast_to(model.closed_forms.psi(x, u), np.broadcast(x, u).shape) * 1.0
    return quad_psi(model, x, u)


def entropy_density(model: EntropyModel, x, u):
    u = _check_u(model, u, strict_entropy=True)
    x = np.asarray(x, dtype=float)
    if model.closed_forms is None:
        return quad_entropy_density(model, x, u)
    xb, ub = np.broadcast_arrays(x, u)
    m = model.equilibrium(xb.ravel()).reshape(xb.shape)
    F = model.closed_forms.antiderivative
    with np.errstate(divide="ignore", invalid="ignore"):
        E = -(F(xb, ub) - F(xb, m)) + model.shift * (ub - m)
    # clamp the roundoff-level negatives next to the minimum
    return np.where(E < 0, np.maximum(E, 0.0), E)


def _solve_level(model: EntropyModel, x: np.ndarray, c: float):
    """Vectorised monotone root of ``f(x, u) = c``.

    Returns ``(u, status)`` with status 0 = solved, +1 = c above the range of
    ``f(x, .)`` (root pinned at the lower end), -1 = c below the range.
    """
    lo_lim = max(model.u_valid[0], 1e-300)
    hi_lim = min(model.u_valid[1], 1e300)
    n = x.size
    lo = np.ones(n)
    hi = np.ones(n)
    status = np.zeros(n, dtype=int)

    with np.errstate(all="ignore"):
        g = lambda u: model.f(x, u) - c  # noqa: E731
        for _ in range(12):
            need = ~(g(lo) > 0) & (lo > lo_lim)
            if not need.any():
                break
            lo = np.where(need, np.maximum(lo ** 2 * 1e-3, lo_lim), lo)
        for _ in range(12):
            need = ~(g(hi) < 0) & (hi < hi_lim)
            if not need.any():
                break
            hi = np.where(need, np.minimum(hi ** 2 * 1e3, hi_lim), hi)
        glo, ghi = g(lo), g(hi)
        status[glo < 0] = 1
        status[ghi > 0] = -1
        status[(glo == 0)] = 0
        status[(ghi == 0)] = 0
        exact_lo = glo == 0
        exact_hi = ghi == 0
        ok = status == 0
        llo, lhi = np.log(lo), np.log(hi)
        for _ in range(200):
            mid = 0.5 * (llo + lhi)
            gm = g(np.exp(mid))
            pos = gm > 0
            llo = np.where(pos, mid, llo)
            lhi = np.where(pos, lhi, mid)
            if np.all(lhi - llo <= 4e-16 * np.maximum(1.0, np.abs(llo))):
                break
        u = np.exp(0.5 * (llo + lhi))
        # Newton polish inside the bracket
        blo, bhi = np.exp(llo), np.exp(lhi)
        for _ in range(4):
            step = g(u) / model.f_u(x, u)
            cand = u - step
            inside = (cand >= blo) & (cand <= bhi) & np.isfinite(cand)
            u = np.where(inside, cand, u)
        u = np.where(exact_lo, lo, u)
        u = np.where(exact_hi & ~exact_lo, hi, u)
    u = np.where(status == 1, 0.0, u)
    u = np.where(status == -1, np.inf, u)
    return u, status


def implicit_level(model: EntropyModel, grid: Grid, c: float) -> DensityField:
    """The density ``m_c`` with ``f(x, m_c(x)) = c`` at every cell center."""
    x = grid.cell_centers
    u, status = _solve_level(model, x, float(c))
    if np.any(status != 0):
        bad = int(np.flatnonzero(status)[0])
        side = "above" if status[bad] > 0 else "below"
        raise RangeError(f"level c={c:g} is {side} the range of f at node {bad} (x={x[bad]:.6g})")
    resid = np.abs(model.f(x, u) - c)
    if np.any(resid > LEVEL_TOL * max(1.0, abs(c))):
        bad = int(np.argmax(resid))
        raise RangeError(f"level c={c:g} unresolved at node {bad}: residual {resid[bad]:.3e}")
    return DensityField(grid, u)


@dataclass(frozen=True)
class EquilibriumResult:
    m: DensityField
    c_star: float
    residual: float
    model: EntropyModel


def normalize_equilibrium(model: EntropyModel, grid: Grid, target_mass: float = 1.0,
                          max_expansions: int = 60) -> EquilibriumResult:
    """Find ``c*`` with ``integrate(m_{c*}) = target_mass`` and shift ``f`` by it.

    The shift is relative to the raw nonlinearity, so normalising an already
    shifted model gives the same result.
    """
    if not target_mass > 0:
        raise ValueError("target_mass must be positive")
    raw = model.shifted(0.0)
    x = grid.cell_centers

    def mass(c):
        u, status = _solve_level(raw, x, c)
        if np.any(status < 0):
            return math.inf
        return integrate(grid, u)

    with np.errstate(all="ignore"):
        start = raw.f(x, np.full_like(x, target_mass / grid.length))
    c0 = float(np.median(start[np.isfinite(start)])) if np.any(np.isfinite(start)) else 0.0
    span = 1.0
    for _ in range(max_expansions):
        c_lo, c_hi = c0 - span, c0 + span
        m_lo, m_hi = mass(c_lo), mass(c_hi)
        if m_lo >= target_mass >= m_hi:
            break
        span *= 2.0
    else:
        raise ModelError(f"{model.name}: equilibrium not normalizable on validity range")

    tol = 1e-13 * target_mass
    c_star = c_lo if abs(m_lo - target_mass) <= tol else c_hi
    for _ in range(400):
        mid = 0.5 * (c_lo + c_hi)
        if mid in (c_lo, c_hi):
            break
        mm = mass(mid)
        c_star = mid
        if abs(mm - target_mass) <= tol:
            break
        if mm > target_mass:
            c_lo = mid
        else:
            c_hi = mid
    shifted = raw.shifted(c_star)
    m = implicit_level(shifted, grid, 0.0)
    if abs(m.mass - target_mass) > 1e-10 * max(1.0, target_mass):
        raise ModelError(f"{model.name}: normalised mass {m.mass!r} misses target {target_mass!r}")
    residual = float(np.max(np.abs(shifted.f(x, m.values))))
    with shifted._lock:
        shifted._cache[("m", np.ascontiguousarray(x, dtype=float).tobytes())] = m.values
    return EquilibriumResult(m=m, c_star=c_star, residual=residual, model=shifted)
