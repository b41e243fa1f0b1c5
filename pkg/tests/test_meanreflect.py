import numpy as np
import pytest

from mrgbsde import meanreflect as mr
from mrgbsde.errors import ConfigurationError, GridMismatch, IterationFailure, PreconditionError
from mrgbsde.gbsde import GenForm, GeneratorSpec, solve_bsde
from mrgbsde.gcore import Grid, PayoffSpec, VolBounds
from mrgbsde.skorokhod import BoundaryCurve, BoundaryPair

VB = VolBounds(0.25, 1.0)
G = Grid.build(VB, nt=50, nx=200)
T = G.t
XI = PayoffSpec("affine", (0, 1))
ZERO = GeneratorSpec()
F_MINUS_Y = GeneratorSpec(GenForm("affine", (0, -1, 0)))


def losses(l_thr, r_thr):
    return BoundaryPair(BoundaryCurve.affine(l_thr), BoundaryCurve.affine(r_thr))


FLAG = losses(np.ones_like(T), 0.5 * (1 - T))
WIDE = losses(np.full_like(T, 5.0), np.full_like(T, -5.0))


@pytest.fixture(scope="module")
def flagship():
    inst = mr.MRInstance(XI, ZERO, FLAG, G, VB)
    return inst, mr.solve(inst)


def test_instance_validation():
    with pytest.raises(PreconditionError, match="inadmissible"):
        mr.MRInstance(PayoffSpec("affine", (2, 1)), ZERO, FLAG, G, VB)
    with pytest.raises(ConfigurationError):
        mr.MRInstance(XI, ZERO, FLAG, G, VB, policy="bogus")
    with pytest.raises(GridMismatch):
        mr.MRInstance(XI, ZERO, FLAG, Grid.build(VB, nt=40, nx=200), VB)


def test_flagship_reflection(flagship):
    _, sol = flagship
    assert np.max(np.abs(sol.AR - 0.5 * T)) <= 1e-9
    assert np.max(np.abs(sol.AL)) == 0.0
    assert np.array_equal(sol.A, sol.AR - sol.AL)
    assert np.max(np.abs(sol.curves.upper_mean - 0.5 * (1 - T))) <= 1e-9
    assert sol.y0 == pytest.approx(0.5, abs=1e-9)
    assert mr.check_flatness(sol).passed


def test_lowered_threshold_lowers_push():
    sol = mr.solve(mr.MRInstance(XI, ZERO, losses(np.ones_like(T), 0.4 * (1 - T)), G, VB))
    assert np.max(np.abs(sol.AR - 0.4 * T)) <= 1e-9


def test_lower_constraint_pulls_down():
    drift = GeneratorSpec(GenForm("affine", (1, 0, 0)))
    inst = mr.MRInstance(XI, drift, losses(0.5 * (1 - T), np.full_like(T, -5.0)), G, VB, policy="linear_y")
    sol = mr.solve(inst)
    assert np.max(np.abs(sol.AL - 0.5 * T)) <= 1e-9
    assert np.max(np.abs(sol.AR)) == 0.0
    assert mr.check_flatness(sol).passed


def test_slack_constraints_leave_bsde_unchanged():
    quad = PayoffSpec("quadratic", (0, 0, 1))
    sol = mr.solve(mr.MRInstance(quad, ZERO, WIDE, G, VB))
    assert np.all(sol.A == 0)
    plain = solve_bsde(quad, ZERO, G, VB)
    assert np.array_equal(sol.y.values, plain.y_field.values)


def test_flatness_negative_control(flagship):
    inst, sol = flagship
    # push when the constraint is slack: extra 0.1 t on A^R and the same on A^L
    bad = mr.with_reflection(sol, inst, sol.AR + 0.1 * T, sol.AL + 0.1 * T)
    rep = mr.check_flatness(bad, tol_flat=1e-6)
    assert not rep.passed
    assert mr.check_flatness(sol, tol_flat=1e-6).passed


def test_routes_agree_on_linear_generator():
    inst = mr.MRInstance(XI, F_MINUS_Y, FLAG, G, VB)
    sols = {p: mr.solve(inst.with_policy(p)) for p in ("linear_y", "picard", "lipschitz_segmented")}
    ref = sols["linear_y"]
    # closed form: E[Y_t] = 0.5(1 - t) forces dA = (0.5 + 0.5(1 - t)) dt
    assert ref.A[-1] == pytest.approx(0.75, abs=G.dt)  # first order in dt
    for p in ("picard", "lipschitz_segmented"):
        assert np.max(np.abs(sols[p].A - ref.A)) <= G.tol
        assert np.max(np.abs(sols[p].curves.upper_mean - ref.curves.upper_mean)) <= G.tol
    assert len(sols["lipschitz_segmented"].segments) == mr.segment_count(mr.contraction_constant(inst), 1.0, G.nt)


def test_iteration_failure_reports_diagnostics():
    inst = mr.MRInstance(XI, F_MINUS_Y, FLAG, G, VB, policy="picard", max_iters=1)
    with pytest.raises(IterationFailure) as exc:
        mr.solve(inst)
    assert len(exc.value.diagnostics) == 1


def test_route_preconditions():
    with pytest.raises(ConfigurationError):
        mr.solve_constant(mr.MRInstance(XI, F_MINUS_Y, FLAG, G, VB))
    mao = GeneratorSpec(GenForm("mao", (0, 0.5, 0)))
    with pytest.raises(ConfigurationError):
        mr.solve(mr.MRInstance(XI, mao, FLAG, G, VB, policy="lipschitz_segmented"))
    with pytest.raises(ConfigurationError):
        mr.solve_linear_y(mr.MRInstance(XI, mao, FLAG, G, VB))


def test_mao_picard_converges():
    mao = GeneratorSpec(GenForm("mao", (0, 0.5, 0)))
    sol = mr.solve(mr.MRInstance(PayoffSpec("affine", (0.2, 1)), mao, WIDE, G, VB, policy="picard", max_iters=30))
    assert sol.iterations[-1] < 1e-6
    assert np.all(sol.A == 0)


def test_segment_count():
    for c in (0.5, 2.0, 5.0, 20.0):
        n = mr.segment_count(c, 1.0, 200)
        d = 1.0 / n
        assert c * d * np.exp(c * d) < 0.5
        if n > 1:
            d_prev = 1.0 / (n - 1)
            assert c * d_prev * np.exp(c * d_prev) >= 0.5


def test_a_stability(flagship):
    inst1, sol1 = flagship
    inst2 = mr.MRInstance(PayoffSpec("affine", (0.1, 1)), ZERO, FLAG, G, VB)
    rep = mr.a_stability(sol1, mr.solve(inst2), inst1, inst2)
    assert rep.passed


def test_csv_output(flagship, tmp_path):
    _, sol = flagship
    path = sol.to_csv(tmp_path / "result.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,E_Y,negE_negY,A,A_R,A_L,slack_L,slack_R"
    assert len(lines) == G.nt + 2
