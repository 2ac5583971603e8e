import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, strategies as st

from hkflow.entropy import (DomainError, RangeError, entropy_density, implicit_level,
                            make_arctangential, make_log_potential, make_power_law,
                            normalize_equilibrium, phi, psi, quad_entropy_density, quad_phi,
                            quad_psi)
from hkflow.expr import Expression
from hkflow.grid import Grid

GRID = Grid.circle(64)


def models():
    return {
        "power1": make_power_law(1.0),
        "power2": make_power_law(2.0),
        "power-half": make_power_law(-0.5),
        "log": make_log_potential(Expression("cos(2*pi*x)")),
        "arctan": make_arctangential(),
    }


@pytest.mark.parametrize("name", list(models()))
def test_closed_forms_match_quadrature(name):
    model = normalize_equilibrium(models()[name], GRID).model
    x = np.repeat(GRID.cell_centers[::8], 5)
    u = np.tile(np.geomspace(0.1, 10, 5), 8)
    for closed, quad in ((entropy_density, quad_entropy_density), (phi, quad_phi), (psi, quad_psi)):
        assert np.allclose(closed(model, x, u), quad(model, x, u), rtol=1e-9, atol=1e-10)


def test_log_potential_constant_is_bessel():
    eq = normalize_equilibrium(make_log_potential(Expression("cos(2*pi*x)")), Grid.circle(256))
    assert eq.c_star == pytest.approx(math.log(scipy.special.i0(1.0)), abs=1e-12)


@pytest.mark.parametrize("name", list(models()))
def test_equilibrium_zero_of_f_and_unit_mass(name):
    eq = normalize_equilibrium(models()[name], GRID)
    assert np.max(np.abs(eq.model.f(GRID.cell_centers, eq.m.values))) <= 1e-10
    assert eq.m.mass == pytest.approx(1.0, abs=1e-10)


def test_normalization_is_shift_invariant():
    model = make_arctangential()
    first = normalize_equilibrium(model, GRID)
    again = normalize_equilibrium(first.model.shifted(0.7), GRID)
    assert again.c_star == pytest.approx(first.c_star, abs=1e-13)


@given(st.floats(0.01, 50))
def test_entropy_density_nonnegative_and_zero_at_equilibrium(u):
    for model in models().values():
        eq = normalize_equilibrium(model, GRID)
        x = GRID.cell_centers[:4]
        assert np.all(entropy_density(eq.model, x, np.full(4, u)) >= 0)
        assert np.allclose(entropy_density(eq.model, x, eq.m.values[:4]), 0, atol=1e-12)


@given(st.floats(-2, 2))
def test_implicit_level_solves_and_is_monotone(c):
    model = make_power_law(1.0)
    if c >= 1:
        with pytest.raises(RangeError):
            implicit_level(model, GRID, c)
        return
    m = implicit_level(model, GRID, c)
    assert np.allclose(model.f(GRID.cell_centers, m.values), c, atol=1e-12)
    if c + 0.1 < 1:
        assert np.all(implicit_level(model, GRID, c + 0.1).values < m.values)


def test_arctangential_range_limit():
    with pytest.raises(RangeError):
        implicit_level(make_arctangential(), GRID, -0.5 * math.log(2) - 0.01)


def test_alpha_zero_rejected():
    with pytest.raises(ValueError):
        make_power_law(0.0)


def test_negative_alpha_diverges_at_vacuum():
    model = make_power_law(-1.5)
    with pytest.raises(DomainError):
        phi(model, 0.5, 1.0)
    with pytest.raises(DomainError):
        entropy_density(make_power_law(1.0), 0.5, -1.0)
