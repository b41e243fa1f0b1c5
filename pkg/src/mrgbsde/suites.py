"""Property suites run by ``mrgbsde verify`` and by the acceptance tests.

Each suite returns a list of :class:`Check` rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import gametheory as gt
from . import meanreflect as mr
from .gbsde import ControlField, GenForm, GeneratorSpec, k_sup_dp, realize_k, solve_bsde
from .gcore import Grid, PayoffSpec, VolBounds, expect_rows, g_expectation
from .skorokhod import (BoundaryCurve, BoundaryPair, check_growth, check_stability, random_affine_instance,
                        solve_backward)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "bound", float(self.bound))


# skorokhod ------------------------------------------------------------------------------


def perturbed_pair(rng: np.random.Generator, a: float, s, bp: BoundaryPair, scale: float = 0.1):
    """A random compatible perturbation of a backward instance (affine boundaries)."""
    n = bp.n
    lo_b, up_b = bp.lower, bp.upper
    d_l = rng.uniform(-scale, scale) + rng.uniform(-scale, scale) * np.linspace(0, 1, n + 1)
    d_r = rng.uniform(-scale, scale) + rng.uniform(-scale, scale) * np.linspace(0, 1, n + 1)
    l2, r2 = lo_b.shifted(d_l), up_b.shifted(d_r)
    bp2 = BoundaryPair(l2, r2)
    s2 = np.asarray(s) + rng.normal(0.0, scale / 4, len(s))
    s2[0] = 0.0
    root_r, root_l = r2.roots()[-1], l2.roots()[-1]
    a2 = float(np.clip(a + rng.uniform(-scale, scale), root_r, root_l))
    return a2, s2, bp2


def skorokhod_suite(seed: int = 0, n_instances: int = 1000, n: int = 50) -> list[Check]:
    """Stability and growth bounds on randomized affine instances."""
    rng = np.random.default_rng(seed)
    stab_fail = growth_fail = 0
    worst_stab = worst_growth = -math.inf
    for _ in range(n_instances):
        while True:
            a1, s1, bp1 = random_affine_instance(rng, n)
            try:
                a2, s2, bp2 = perturbed_pair(rng, a1, s1, bp1)
                break
            except Exception:
                continue
        sol1 = solve_backward(a1, s1, bp1)
        sol2 = solve_backward(a2, s2, bp2)
        rep = check_stability(sol1, sol2, a1, a2, s1, s2, bp1, bp2)
        stab_fail += not rep.passed
        worst_stab = max(worst_stab, rep.lhs - rep.rhs)
        for sol, a, s, bp in ((sol1, a1, s1, bp1), (sol2, a2, s2, bp2)):
            gr = check_growth(sol, a, s, bp)
            growth_fail += not gr.passed
            worst_growth = max(worst_growth, float(np.max(gr.lhs - gr.bound)))
    return [
        Check("skorokhod_stability", stab_fail == 0, float(stab_fail), 0.0,
              f"{n_instances} pairs; max(lhs - rhs) = {worst_stab:.3g}"),
        Check("skorokhod_growth", growth_fail == 0, float(growth_fail), 0.0,
              f"{2 * n_instances} solutions; max(lhs - bound) = {worst_growth:.3g}"),
    ]


def skorokhod_flagship(nt: int = 1000, tol: float = 1e-8) -> list[Check]:
    """``l = x - 1``, ``r = x - 0.5(1-t)``, ``a = 0``, ``s = 0``: ``A^R_t = 0.5 t``."""
    t = np.linspace(0.0, 1.0, nt + 1)
    bp = BoundaryPair(BoundaryCurve.affine(np.ones(nt + 1)), BoundaryCurve.affine(0.5 * (1 - t)))
    sol = solve_backward(0.0, np.zeros(nt + 1), bp, tol=1e-12, times=t)
    err = float(np.max(np.abs(sol.kr - 0.5 * t)))
    sr, sl = sol.flatness_sums(bp)
    return [
        Check("flagship_AR", err <= tol, err, tol),
        Check("flagship_AL_zero", float(np.max(np.abs(sol.kl))) == 0.0, float(np.max(np.abs(sol.kl))), 0.0),
        Check("flagship_flatness", max(sr, sl) <= tol, max(sr, sl), tol),
    ]


# G-expectation engine ---------------------------------------------------------------------


def gexp_suite(vb: VolBounds, grid: Grid, seed: int = 0, n_trials: int = 20) -> list[Check]:
    """Moments of ``B_1`` and the sublinear-expectation axioms on random rows."""
    rng = np.random.default_rng(seed)
    out = []
    e2 = g_expectation(PayoffSpec("quadratic", (0, 0, 1)), 1.0, grid, vb)
    en2 = g_expectation(PayoffSpec("quadratic", (0, 0, -1)), 1.0, grid, vb)
    rel_hi = abs(e2 - vb.sigma_high_sq) / vb.sigma_high_sq
    out.append(Check("E[B1^2]", rel_hi <= 0.02, e2, vb.sigma_high_sq, f"relative error {rel_hi:.2e}"))
    if vb.sigma_low_sq > 0:
        rel_lo = abs(en2 + vb.sigma_low_sq) / vb.sigma_low_sq
    else:
        rel_lo = abs(en2)
    out.append(Check("E[-B1^2]", rel_lo <= 0.02, en2, -vb.sigma_low_sq, f"relative error {rel_lo:.2e}"))
    x = grid.x
    t_idx = grid.index_of(min(1.0, grid.T))
    n_sub = 0
    n_mono = n_const = n_pos = 0
    for _ in range(n_trials):
        c = rng.normal(0, 1, 4)
        X = c[0] + c[1] * np.sin(c[2] * x) + 0.1 * c[3] * x ** 2
        d = rng.normal(0, 1, 3)
        Y = d[0] * np.abs(x) + d[1] * np.cos(x) + d[2]
        lam = rng.uniform(0.1, 3.0)
        k = rng.normal()
        rows = np.stack([X, Y, X + Y, X + np.abs(Y) + 0.01, np.full_like(x, k), lam * X, X + k])
        ev = expect_rows(rows, grid, vb, np.full(len(rows), t_idx))
        ex, ey, exy, edom, ek, elam, eshift = ev
        n_sub += not (exy <= ex + ey + 1e-12 * (1 + abs(ex) + abs(ey)))
        n_mono += not (edom >= ex)
        n_const += not (ek == k)
        n_pos += not (abs(elam - lam * ex) <= 1e-12 * (1 + abs(lam * ex)) and
                      abs(eshift - (ex + k)) <= 1e-12 * (1 + abs(ex) + abs(k)))
    out.append(Check("sublinearity", n_sub == 0, float(n_sub), 0.0, f"{n_trials} random pairs"))
    out.append(Check("monotonicity", n_mono == 0, float(n_mono), 0.0, "exact"))
    out.append(Check("constant_preservation", n_const == 0, float(n_const), 0.0, "exact"))
    out.append(Check("homogeneity_translation", n_pos == 0, float(n_pos), 0.0))
    return out


# classical limit ---------------------------------------------------------------------------


def _rel(value: float, oracle: float, scale: float | None = None) -> float:
    scale = abs(oracle) if scale is None else scale
    return abs(value - oracle) / max(scale, 1e-12)


def classical_suite(sigma_sq: float = 1.0, T: float = 1.0, nt: int = 200, nx: int = 400) -> list[Check]:
    """Solvers under a degenerate volatility interval against Brownian closed forms."""
    vb = VolBounds.constant(sigma_sq)
    g = Grid.build(vb, T=T, nt=nt, nx=nx)
    sd = math.sqrt(sigma_sq * T)
    out = []
    q = g_expectation(PayoffSpec("quadratic", (0, 0, 1)), T, g, vb)
    out.append(Check("quadratic", _rel(q, sigma_sq * T) <= 0.02, q, sigma_sq * T))
    k = 0.3
    call_oracle = sd * norm.pdf(k / sd) - k * norm.sf(k / sd)
    c = g_expectation(PayoffSpec("call", (k, 1.0)), T, g, vb)
    out.append(Check("call", _rel(c, call_oracle) <= 0.02, c, call_oracle))
    cl = g_expectation(PayoffSpec("call", (k, 1.0)), T, g, vb, lower=True)
    out.append(Check("call_no_mean_uncertainty", _rel(cl, call_oracle) <= 0.02, cl, call_oracle))
    # linear BSDE f = -r y: Y_0 = exp(-rT) E[xi]
    r = 0.5
    gen = GeneratorSpec(f=GenForm("affine", (0.0, -r, 0.0)))
    b = solve_bsde(PayoffSpec("quadratic", (1.0, 0, 1)), gen, g, vb)
    oracle = math.exp(-r * T) * (1.0 + sigma_sq * T)
    out.append(Check("linear_bsde_quadratic", _rel(b.y0, oracle) <= 0.02, b.y0, oracle))
    # mean-reflected flagship: E[Y_t] = 0.5(1-t), Y = x + 0.5(1-t)
    t = g.t
    pair = BoundaryPair(BoundaryCurve.affine(np.ones_like(t)), BoundaryCurve.affine(0.5 * (1 - t)))
    inst = mr.MRInstance(PayoffSpec("affine", (0, 1)), GeneratorSpec(), pair, g, vb)
    sol = mr.solve(inst)
    err = float(np.max(np.abs(sol.curves.upper_mean - 0.5 * (1 - t))))
    out.append(Check("reflected_flagship_mean", err <= 0.02 * 0.5, err, 0.01))
    # reflected call: slack constraints leave E[Y_0] at the call price
    wide = BoundaryPair(BoundaryCurve.affine(np.full_like(t, 10.0)), BoundaryCurve.affine(np.full_like(t, -10.0)))
    inst2 = mr.MRInstance(PayoffSpec("call", (k, 1.0)), GeneratorSpec(), wide, g, vb, policy="linear_y")
    sol2 = mr.solve(inst2)
    out.append(Check("reflected_slack_call", _rel(sol2.y0, call_oracle) <= 0.02
                     and float(np.max(np.abs(sol2.A))) == 0.0, sol2.y0, call_oracle))
    return out


# K process ---------------------------------------------------------------------------------


def kprocess_suite(terminal: PayoffSpec, gen: GeneratorSpec, grid: Grid, vb: VolBounds, seed: int = 0,
                   n_controls: int = 1000) -> list[Check]:
    """``K`` is nonincreasing under random controls and ``max E[K_T] = 0``."""
    rng = np.random.default_rng(seed)
    sol = solve_bsde(terminal, gen, grid, vb)
    viol = 0
    worst = -math.inf
    for _ in range(n_controls):
        ctrl = ControlField.random(rng, grid, vb)
        path = rng.integers(grid.nx // 4, 3 * grid.nx // 4 + 1, grid.nt + 1)
        K = realize_k(sol, ctrl, grid, vb, path)
        inc = float(np.max(np.diff(K)))
        worst = max(worst, inc)
        viol += inc > 0
    sup = k_sup_dp(sol, grid, vb)
    return [
        Check("k_nonincreasing", viol == 0, float(viol), 0.0, f"{n_controls} controls; max increment {worst:.3g}"),
        Check("k_sup_zero", abs(sup) <= grid.tol, sup, grid.tol),
    ]


# games ---------------------------------------------------------------------------------------


def game_suite(inst: mr.MRInstance, t: float = 0.0, s_count=None, q_count=None,
               sol: mr.MRSolution | None = None) -> list[Check]:
    """Optimization chain, minimax inequality and (in the linear form) the saddle point."""
    sol = mr.solve(inst) if sol is None else sol
    gg = gt.GameGrid.sampled(inst.grid, t, s_count, q_count)
    gv = gt.optim_bounds(sol, inst, gg)
    tol = gv.tol
    out = [
        Check("chain", gv.chain_ok, gv.E_Y, gv.supinf_upper,
              f"{gv.infsup_lower:.6g} <= {gv.negE_negY:.6g} <= {gv.E_Y:.6g} <= {gv.supinf_upper:.6g}"),
        Check("minimax", gv.minimax_ok, gv.infsup_upper - gv.supinf_upper, 0.0),
        Check("equality_case", gv.equality_ok, abs(gv.supinf_upper - gv.E_Y), 3 * tol,
              "applies" if gv.equality_case else "not applicable"),
    ]
    try:
        gt.check_linear_form(inst)
    except Exception:
        return out
    lg = gt.linear_game(inst, gg, sol)
    out += [
        Check("linear_value", lg.equal_ok, lg.supinf, lg.E_Y, f"inf-sup {lg.infsup:.6g}"),
        Check("linear_saddle", lg.saddle_ok, lg.saddle_value, lg.supinf),
        Check("saddle_matches_bruteforce", lg.brute_match,
              lg.s_star, lg.brute_s, f"s*={lg.s_star}, q*={lg.q_star}; brute s={lg.brute_s}, q={lg.brute_q}"),
    ]
    return out
