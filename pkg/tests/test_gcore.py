import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrgbsde.errors import ConfigurationError, DomainError
from mrgbsde.gcore import (Grid, PayoffSpec, ValueField, VolBounds, expect_rows, g_apply, g_eval,
                           g_expectation, mean_functional, solve_g_heat, step_back)

VB = VolBounds(0.25, 1.0)
SMALL = Grid.build(VB, nt=50, nx=200)


def test_volbounds_invariants():
    with pytest.raises(ConfigurationError):
        VolBounds(1.0, 1.0)
    with pytest.raises(ConfigurationError):
        VolBounds(1.0, 0.5)
    with pytest.raises(ConfigurationError):
        VolBounds(-0.1, 1.0)
    with pytest.raises(ConfigurationError):
        VolBounds(0.5, 1.0, degenerate=True)
    vb = VolBounds.constant(0.7)
    assert vb.sigma_low_sq == vb.sigma_high_sq == 0.7


def test_grid_invariants_and_cfl():
    with pytest.raises(ConfigurationError):
        Grid(T=1.0, nx=201)
    with pytest.raises(ConfigurationError):
        Grid(T=0.0)
    g = Grid.build(VB)
    assert g.dt_pde * VB.sigma_high_sq / g.h ** 2 <= 1.0
    assert g.x[g.center] == 0.0
    assert g.index_of(0.5) == 100
    assert g.tol == pytest.approx(10 * (g.h + g.dt))
    with pytest.raises(ConfigurationError):
        Grid(T=1.0, nt=10, nx=400, substeps=1).check_cfl(VB)


def test_g_function():
    assert g_eval(2.0, VB) == pytest.approx(1.0)
    assert g_eval(-2.0, VB) == pytest.approx(-0.25)
    with pytest.raises(DomainError):
        g_eval(float("nan"), VB)


@given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(-1e6, 1e6, allow_nan=False))
def test_g_sublinear_and_lower_dual(a, b):
    ga, gb, gab = (float(g_apply(v, VB)) for v in (a, b, a + b))
    assert gab <= ga + gb + 1e-9 * (1 + abs(a) + abs(b))
    assert float(g_apply(a, VB, lower=True)) == pytest.approx(-float(g_apply(-a, VB)))


def test_step_back_rejects_cfl_violation():
    u = np.zeros(SMALL.nx + 1)
    with pytest.raises(ConfigurationError):
        step_back(u, 0.0, 0.0, SMALL, VB, dt=10 * SMALL.h ** 2)


def test_heat_moments():
    g = Grid.build(VB)
    quad = PayoffSpec("quadratic", (0, 0, 1))
    assert g_expectation(quad, 1.0, g, VB) == pytest.approx(1.0, rel=0.02)
    assert g_expectation(quad, 1.0, g, VB, lower=True) == pytest.approx(0.25, rel=0.02)
    assert g_expectation(PayoffSpec("quadratic", (0, 0, -1)), 1.0, g, VB) == pytest.approx(-0.25, rel=0.02)
    # constants pass through exactly
    assert g_expectation(PayoffSpec("affine", (3.5, 0)), 1.0, g, VB) == 3.5


def test_solve_g_heat_field():
    field = solve_g_heat(PayoffSpec("quadratic", (0, 0, 1)), SMALL, VB)
    assert field.values.shape == (SMALL.nt + 1, SMALL.nx + 1)
    assert field.origin(0) == pytest.approx(1.0, rel=0.05)
    assert np.array_equal(field.at(1.0), SMALL.x ** 2)


def test_expect_rows_matches_full_solve():
    g = Grid.build(VB)
    row = np.abs(g.x) + 0.3 * np.sin(g.x)
    full = g_expectation(row, 0.5, g, VB)
    sliced = expect_rows(row[None, :], g, VB, [g.index_of(0.5)])[0]
    assert sliced == pytest.approx(full, abs=g.tol)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.floats(-5, 5), st.integers(0, 50))
def test_expect_rows_monotone_and_constant(c, k, i):
    x = SMALL.x
    row = c[0] + c[1] * np.sin(x) + c[2] * np.abs(x)
    rows = np.stack([row, row + np.abs(np.cos(x)), np.full_like(x, k), row + k])
    e = expect_rows(rows, SMALL, VB, np.full(4, i))
    assert e[1] >= e[0]
    assert e[2] == k
    assert e[3] == pytest.approx(e[0] + k, abs=1e-12 * (1 + abs(k) + abs(e[0])))


def test_mean_functional_identity_loss():
    field = solve_g_heat(PayoffSpec("affine", (0, 1)), SMALL, VB)
    # loss(y) = y: centered at the mean, the offset comes back unchanged
    v = mean_functional(field, lambda i, y: y, 0.5, 0.3, SMALL, VB)
    assert v == pytest.approx(0.3, abs=1e-9)


def test_payoff_catalog():
    with pytest.raises(ConfigurationError):
        PayoffSpec("cubic", (1, 2))
    with pytest.raises(ConfigurationError):
        PayoffSpec("affine", (1, 2, 3))
    with pytest.raises(ConfigurationError):
        PayoffSpec("call", (0, 1)).shifted(1.0)
    p = PayoffSpec("abs", (1.0, 2.0, 0.5))
    assert p(np.array([0.5, 1.5])).tolist() == [1.0, 3.0]
    assert p.lipschitz_bound == 2.0
    assert PayoffSpec("quadratic", (0, 0, 1)).lipschitz_bound == np.inf
    assert PayoffSpec("affine", (0, 1)).shifted(0.5)(0.0) == 0.5


def test_value_field_shape_and_finiteness():
    with pytest.raises(ConfigurationError):
        ValueField(np.zeros((3, 3)), SMALL)
    bad = np.zeros((SMALL.nt + 1, SMALL.nx + 1))
    bad[0, 0] = np.nan
    with pytest.raises(DomainError):
        ValueField(bad, SMALL)
