import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrgbsde.errors import AlignmentError, ConfigurationError
from mrgbsde.gbsde import (ControlField, GenForm, GeneratorSpec, check_apriori, check_perturbation, expect_with_k,
                           k_sup_dp, mao_m, mao_modulus, realize_k, solve_bsde, stopped_values)
from mrgbsde.gcore import Grid, PayoffSpec, VolBounds

VB = VolBounds(0.25, 1.0)
G = Grid.build(VB, nt=50, nx=200)
QUAD = PayoffSpec("quadratic", (0, 0, 1))


def test_generator_validation():
    with pytest.raises(ConfigurationError):
        GenForm("cubic", (0, 0, 0))
    with pytest.raises(ConfigurationError):
        GenForm("affine", (0, 0))
    with pytest.raises(ConfigurationError):
        GeneratorSpec(GenForm("affine", (0, 0, 2.0)), kappa=1.0)
    gen = GeneratorSpec(GenForm("mao", (0, 0.5, 0)))
    assert gen.modulus == "mao"
    assert not gen.is_linear_y
    assert GeneratorSpec(GenForm("affine", (1, -2, 0.5))).is_linear_y


def test_constant_drivers():
    # f = c: Y_0 = c T
    y0 = solve_bsde(PayoffSpec("affine", (0, 0)), GeneratorSpec(GenForm("affine", (0.7, 0, 0))), G, VB).y0
    assert y0 == pytest.approx(0.7, abs=1e-12)
    # g = c: Y_0 = E[c <B>_T], sigma_high^2 for c > 0 and sigma_low^2 for c < 0
    for c, s2 in ((0.4, VB.sigma_high_sq), (-0.4, VB.sigma_low_sq)):
        y0 = solve_bsde(PayoffSpec("affine", (0, 0)), GeneratorSpec(g=GenForm("affine", (c, 0, 0))), G, VB).y0
        assert y0 == pytest.approx(c * s2, abs=1e-12)


def test_linear_driver_discount():
    gen = GeneratorSpec(GenForm("affine", (0, -0.5, 0)))
    y0 = solve_bsde(PayoffSpec("affine", (1, 0)), gen, G, VB).y0
    assert y0 == pytest.approx(math.exp(-0.5), rel=1e-3)


def test_k_process_properties():
    sol = solve_bsde(QUAD, GeneratorSpec(), G, VB)
    rng = np.random.default_rng(0)
    for _ in range(50):
        K = realize_k(sol, ControlField.random(rng, G, VB), G, VB)
        assert np.all(np.diff(K) <= 1e-15)
    # the worst-case control leaves K at zero
    K = realize_k(sol, ControlField.argmax(sol, VB), G, VB)
    assert np.max(np.abs(K)) <= 1e-12
    assert abs(k_sup_dp(sol, G, VB)) <= G.tol
    with pytest.raises(ConfigurationError):
        ControlField(np.full((G.nt, G.nx + 1), 2.0), VB)


def test_dp_recovers_y0():
    gen = GeneratorSpec(GenForm("affine", (0.2, 0, 0)), GenForm("affine", (0.1, 0, 0)))
    sol = solve_bsde(QUAD, gen, G, VB)
    row = expect_with_k(sol, QUAD, 0.0, 1.0, G, VB)
    assert row[G.center] == pytest.approx(sol.y0, abs=1e-9)
    with pytest.raises(AlignmentError):
        expect_with_k(sol, QUAD, 0.5, 0.2, G, VB)


def test_stopped_values_at_horizon_match_solver():
    gen = GeneratorSpec(GenForm("affine", (0, -1, 0)))
    sol = solve_bsde(QUAD, gen, G, VB)
    rows = stopped_values(QUAD(G.x)[None, :], [G.nt], 0, gen, G, VB)
    assert rows[0, G.center] == pytest.approx(sol.y0, abs=1e-12)


@given(st.floats(0, 10), st.floats(0, 10))
def test_mao_modulus(r1, r2):
    assert mao_modulus(0.0) == 0.0
    mid = mao_modulus(0.5 * (r1 + r2))
    assert mid >= 0.5 * (mao_modulus(r1) + mao_modulus(r2)) - 1e-12
    assert abs(mao_m(r1) - mao_m(r2)) <= mao_modulus(abs(r1 - r2)) + 1e-12


def test_diagnostic_bounds():
    gen = GeneratorSpec(GenForm("affine", (0.1, 0.2, 0)))
    s1 = solve_bsde(QUAD, gen, G, VB)
    s2 = solve_bsde(QUAD.shifted(0.01), gen, G, VB)
    assert not check_apriori(s1, QUAD, gen, G, VB).flagged
    rep = check_perturbation(s1, s2, 0.01)
    assert not rep.flagged and rep.lhs > 0
