import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import prox_brute_force, reaction_path_action, w2_from_samples
from hkflow.fields import DensityField
from hkflow.grid import Grid
from hkflow.transport import (DistanceKind, NonConvergenceError, SolverOpts, TransportProblem,
                              action_density, check_ordering, prox_action, solve_dynamic,
                              w2_quantile_oracle)

KINDS = list(DistanceKind)


def bump(grid, center, width=0.08, floor=0.0):
    d = grid.cell_centers - center
    if grid.periodic:
        d = (d + 0.5 * grid.length) % grid.length - 0.5 * grid.length
    v = np.exp(-0.5 * (d / width) ** 2) + floor
    return DensityField(grid, v / (grid.h * v.sum()))


@given(st.floats(-3, 3), arrays(float, 2, elements=st.floats(-3, 3)), st.floats(0.01, 10))
def test_prox_matches_brute_force(rho0, p0, gamma):
    r, p = prox_action(rho0, p0, gamma)
    r_ref, p_ref = prox_brute_force(rho0, p0, gamma)
    assert r == pytest.approx(r_ref, abs=1e-8) and np.allclose(p, p_ref, atol=1e-8)


@given(arrays(float, (2, 3), elements=st.floats(-4, 4)), arrays(float, (2, 3, 2), elements=st.floats(-4, 4)),
       st.floats(0.05, 5))
def test_prox_is_nonexpansive(rhos, ps, gamma):
    (ra, pa), (rb, pb) = (prox_action(rhos[i], ps[i].T, gamma) for i in range(2))
    before = np.sqrt((rhos[0] - rhos[1]) ** 2 + np.sum((ps[0] - ps[1]) ** 2, axis=-1))
    after = np.sqrt((ra - rb) ** 2 + np.sum((pa - pb) ** 2, axis=0))
    assert np.all(after <= before + 1e-9)


def test_prox_fixed_point_and_apex():
    r, p = prox_action(-1.0, np.array([0.1]), 1.0)
    assert r == 0 and p[0] == 0
    r, p = prox_action(5.0, np.array([0.0]), 1.0)
    assert r == 5.0 and p[0] == 0


def test_action_density_vacuum_convention():
    p = np.array([[0.0, 1.0, 0.0]])
    vals = action_density(np.array([0.0, 0.0, 2.0]), p)
    assert vals[0] == 0 and math.isinf(vals[1]) and vals[2] == 0


@pytest.mark.parametrize("kind", KINDS)
def test_identical_endpoints_have_zero_distance(kind):
    grid = Grid.circle(32)
    a = bump(grid, 0.4, 0.1, floor=0.1)
    res = solve_dynamic(TransportProblem(grid, a, a, kind, n_time=8))
    assert res.converged and res.distance_sq < 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_distance_is_symmetric(kind):
    grid = Grid.circle(32)
    a, b = bump(grid, 0.3, 0.1, 0.05), bump(grid, 0.6, 0.1, 0.05)
    ab = solve_dynamic(TransportProblem(grid, a, b, kind, n_time=16)).distance_sq
    ba = solve_dynamic(TransportProblem(grid, b, a, kind, n_time=16)).distance_sq
    assert ab == pytest.approx(ba, rel=1e-3)


def test_quantile_oracle_against_samples_and_translation():
    grid = Grid.interval(200)
    a, b = bump(grid, 0.3), bump(grid, 0.7)
    ref = w2_from_samples(grid.cell_centers, a.values * grid.h, grid.cell_centers, b.values * grid.h)
    assert w2_quantile_oracle(grid, a, b) == pytest.approx(ref, rel=5e-3)
    assert w2_quantile_oracle(grid, a, b) == pytest.approx(0.16, rel=0.01)
    uniform = DensityField(grid, np.ones(200))
    left = DensityField(grid, np.where(grid.cell_centers < 0.5, 2.0, 0.0))
    # x -> x/2 moves mass by x/2 on average squared 1/12
    assert w2_quantile_oracle(grid, uniform, left) == pytest.approx(1 / 12, rel=1e-3)


def test_w2_on_interval_matches_quantiles():
    grid = Grid.interval(64)
    a, b = bump(grid, 0.35, 0.1), bump(grid, 0.65, 0.1)
    res = solve_dynamic(TransportProblem(grid, a, b, DistanceKind.W2, n_time=16))
    assert res.distance_sq == pytest.approx(w2_quantile_oracle(grid, a, b), rel=0.03)


def test_homogeneous_hk_matches_reaction_path():
    grid = Grid.circle(8)
    res = solve_dynamic(TransportProblem(grid, DensityField(grid, np.ones(8)),
                                         DensityField(grid, np.full(8, 4.0)), DistanceKind.HK, 16))
    assert res.distance_sq == pytest.approx(reaction_path_action(1.0, 4.0), rel=0.01)
    assert res.distance_sq <= 4 * (1 + 4) + 1e-9


def test_unit_mass_required():
    grid = Grid.circle(8)
    one, two = DensityField(grid, np.ones(8)), DensityField(grid, np.full(8, 2.0))
    for kind in (DistanceKind.W2, DistanceKind.HKS):
        with pytest.raises(ValueError):
            TransportProblem(grid, one, two, kind)
    TransportProblem(grid, one, two, DistanceKind.HK)


def test_hellinger_far_below_wasserstein_on_long_circle():
    grid = Grid.circle(64, length=20.0)
    a, b = bump(grid, 5.0, 0.6), bump(grid, 15.0, 0.6)
    rep = check_ordering(grid, a, b, n_time=16)
    assert rep.passed
    assert rep.distances["HK"] ** 2 < 0.2 * rep.distances["W2"] ** 2
    assert rep.distances["HKS"] ** 2 <= math.pi**2 + 1e-6


def test_nonconvergence_carries_best_iterate():
    grid = Grid.circle(16)
    a, b = bump(grid, 0.2, 0.05), bump(grid, 0.7, 0.05)
    with pytest.raises(NonConvergenceError) as info:
        solve_dynamic(TransportProblem(grid, a, b, DistanceKind.W2, 8, SolverOpts(max_iters=20)))
    res = info.value.result
    assert not res.converged and res.iters <= 20 and math.isfinite(res.residual)
