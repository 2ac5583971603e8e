"""Independent reference computations used by the tests.

Nothing here calls into the package; each oracle recomputes its quantity by a
different route than the code under test.
"""

from __future__ import annotations

import math

import numpy as np


def prox_brute_force(rho0: float, p0: np.ndarray, gamma: float):
    """Minimise ``gamma |p|^2 / rho + |rho - rho0|^2 / 2 + |p - p0|^2 / 2``.

    By rotation invariance the minimiser has ``p = s p0 / |p0|``, leaving the
    two unknowns ``(rho, s)``: a grid search locates the basin and damped
    Newton on the 2D gradient polishes it.  The apex ``(0, 0)`` is compared
    separately.
    """
    p0 = np.asarray(p0, dtype=float)
    q = float(np.linalg.norm(p0))
    if q == 0:
        return max(rho0, 0.0), np.zeros_like(p0)
    direction = p0 / q

    def obj(r, s):
        return gamma * s * s / r + 0.5 * (r - rho0) ** 2 + 0.5 * (s - q) ** 2

    apex = 0.5 * (rho0**2 + q**2)
    hi = max(rho0, 0.0) + q + 1.0
    R, S = np.meshgrid(np.geomspace(1e-9, hi, 600), np.geomspace(1e-9 * q, q, 300), indexing="ij")
    vals = obj(R, S)
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    r, s = float(R[i, j]), float(S[i, j])
    def grad(r, s):
        return np.array([-gamma * s * s / r**2 + (r - rho0), 2 * gamma * s / r + (s - q)])

    for _ in range(200):
        g = grad(r, s)
        H = np.array([[2 * gamma * s * s / r**3 + 1, -2 * gamma * s / r**2],
                      [-2 * gamma * s / r**2, 2 * gamma / r + 1]])
        if not np.all(np.isfinite(H)) or np.linalg.cond(H) > 1e14:
            break  # drifting onto the apex; handled below
        step = np.linalg.solve(H, g)
        t, size = 1.0, np.linalg.norm(g)
        # damp until inside rho > 0 with a smaller gradient
        while t > 1e-12 and (r - t * step[0] <= 0
                             or np.linalg.norm(grad(r - t * step[0], s - t * step[1])) > size):
            t *= 0.5
        if r - t * step[0] <= 0:
            break
        r, s = r - t * step[0], s - t * step[1]
        if np.max(np.abs(t * step)) <= 1e-16 * max(1.0, abs(r), abs(s)) or size == 0:
            break
    if obj(r, s) < apex:
        return r, s * direction
    return 0.0, np.zeros_like(p0)


def w2_from_samples(x0, w0, x1, w1):
    """W2^2 between two weighted point clouds on the line (north-west corner rule)."""
    i0, i1 = np.argsort(x0), np.argsort(x1)
    x0, w0, x1, w1 = x0[i0], w0[i0] / w0.sum(), x1[i1], w1[i1] / w1.sum()
    a, b, total = 0, 0, 0.0
    ra, rb = w0[0], w1[0]
    while a < len(x0) and b < len(x1):
        m = min(ra, rb)
        total += m * (x0[a] - x1[b]) ** 2
        ra -= m
        rb -= m
        if ra <= 1e-15:
            a += 1
            ra = w0[a] if a < len(x0) else 0
        if rb <= 1e-15:
            b += 1
            rb = w1[b] if b < len(x1) else 0
    return total


def reaction_path_action(a: float, b: float, length: float = 1.0) -> float:
    """Action of the homogeneous path ``rho_t = ((1 - t) sqrt a + t sqrt b)^2``.

    Then ``zeta = d_t rho`` and the action is ``int zeta^2 / rho = 4 (sqrt b - sqrt a)^2``
    per unit length; here evaluated by quadrature, not by the closed form.
    """
    from scipy.integrate import quad

    def integrand(t):
        g = (1 - t) * math.sqrt(a) + t * math.sqrt(b)
        dg = math.sqrt(b) - math.sqrt(a)
        rho = g * g
        zeta = 2 * g * dg
        return zeta * zeta / rho

    return length * quad(integrand, 0, 1, epsabs=1e-14)[0]


def heat_rate_circle(length: float = 1.0) -> float:
    """Entropy decay rate of the heat flow on a circle: twice the first eigenvalue."""
    return 2 * (2 * math.pi / length) ** 2
