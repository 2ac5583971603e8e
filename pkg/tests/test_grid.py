import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hkflow.expr import Expression, ExpressionError
from hkflow.fields import DensityField
from hkflow.grid import (Grid, average_faces, divergence_cells, gradient_faces, integrate,
                         reconstruct_faces)

finite = st.floats(-10, 10, allow_nan=False)
sizes = st.integers(2, 40)


def grids():
    return st.builds(lambda kind, n, L: Grid(kind, n, L), st.sampled_from(["circle", "interval"]),
                     sizes, st.floats(0.1, 10))


@given(grids(), st.data())
def test_summation_by_parts(grid, data):
    u = data.draw(arrays(float, grid.n_cells, elements=finite))
    F = data.draw(arrays(float, grid.n_faces, elements=finite))
    if not grid.periodic:
        F[0] = F[-1] = 0.0
    lhs = grid.h * np.sum(u * divergence_cells(grid, F))
    rhs = -grid.h * np.sum(gradient_faces(grid, u) * F)
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + np.abs(u).sum() * np.abs(F).sum()))


@given(grids(), st.data())
def test_divergence_integrates_to_wall_flux(grid, data):
    F = data.draw(arrays(float, grid.n_faces, elements=finite))
    total = integrate(grid, divergence_cells(grid, F))
    expected = 0.0 if grid.periodic else F[-1] - F[0]
    assert total == pytest.approx(expected, abs=1e-10 * (1 + np.abs(F).sum()))


@given(grids(), st.data())
def test_reconstruction_stays_between_neighbours(grid, data):
    u = data.draw(arrays(float, grid.n_cells, elements=st.floats(0, 5)))
    left, right = reconstruct_faces(grid, u)
    avg = average_faces(grid, u)
    lo, hi = u.min(), u.max()
    for v in (left, right, avg):
        assert np.all(v >= lo - 1e-12) and np.all(v <= hi + 1e-12)
    assert np.all(left >= 0) and np.all(right >= 0)


def test_reconstruction_exact_for_linear_interior():
    grid = Grid.interval(16)
    u = 2 + grid.cell_centers
    left, right = reconstruct_faces(grid, u)
    faces = grid.face_positions[2:-2]
    assert np.allclose(left[2:-2], 2 + faces) and np.allclose(right[2:-2], 2 + faces)


def test_gradient_of_constant_vanishes():
    for grid in (Grid.circle(8), Grid.interval(8)):
        assert np.all(gradient_faces(grid, np.full(8, 3.0)) == 0)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid.circle(1)
    with pytest.raises(ValueError):
        Grid.interval(4, length=0)
    with pytest.raises(ValueError):
        gradient_faces(Grid.circle(4), np.ones(5))


def test_density_field_checks():
    grid = Grid.circle(4)
    with pytest.raises(ValueError):
        DensityField(grid, [1, -1, 1, 1])
    with pytest.raises(ValueError):
        DensityField(grid, [1, np.nan, 1, 1])
    d = DensityField.from_function(grid, Expression("1 + x"), normalize=2.0)
    assert d.mass == pytest.approx(2.0)
    assert d.scaled(0.5).mass == pytest.approx(1.0)


@given(st.floats(-3, 3))
def test_expression_derivative_matches_finite_difference(x):
    e = Expression("exp(sin(2*pi*x)) / (2 + cos(x)) - x**3 + e*pi")
    h = 1e-6
    fd = (e(x + h) - e(x - h)) / (2 * h)
    assert e.derivative(x) == pytest.approx(fd, rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("bad", ["", "y + 1", "x ** x", "__import__('os')", "log(x)", "x[0]",
                                 "cos(x, 1)", "'a'", "True"])
def test_expression_rejects(bad):
    with pytest.raises(ExpressionError):
        Expression(bad)


def test_constant_expression_broadcasts():
    assert Expression("2*pi")(np.zeros(3)).shape == (3,)
