"""Comparison results and optimization (game) representations of mean-reflected solutions.

Stopping times are deterministic grid times. Game matrices are indexed
``[s, q]`` with ``s`` from ``GameGrid.S`` (rows) and ``q`` from
``GameGrid.Q`` (columns).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .csvio import fmt
from .errors import AlignmentError, ConfigurationError, PreconditionError
from .gbsde import dp_window, stopped_values
from .gcore import Grid, expect_rows
from .meanreflect import (MRInstance, MRSolution, build_boundaries, solve, solve_linear_y)
from .skorokhod import solve_one_sided


def game_tol(grid: Grid) -> float:
    """Tolerance ``20 (h + dt)`` used by the game checks."""
    return 2.0 * grid.tol


def crossing_tol(grid: Grid) -> float:
    """Tolerance ``0.01 (h + dt)`` for detecting ``E[Y_s] = threshold_s``.

    The value tolerance is far coarser than typical gaps between the mean
    curve and a non-binding threshold, so crossings use their own scale.
    """
    return 1e-3 * grid.tol


@dataclass(frozen=True)
class GameGrid:
    """Base time index ``i_t`` and the index sets for ``s`` and ``q`` (both contain ``nt``)."""

    grid: Grid
    i_t: int
    S: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        nt = self.grid.nt
        for name in ("S", "Q"):
            v = np.unique(np.asarray(getattr(self, name), dtype=int))
            if v.size == 0 or v.min() < self.i_t or v.max() > nt:
                raise AlignmentError(f"{name} must lie in [t, T] on the grid")
            if v[-1] != nt:
                raise AlignmentError(f"{name} must contain T")
            object.__setattr__(self, name, v)

    @classmethod
    def full(cls, grid: Grid, t: float) -> "GameGrid":
        i = grid.index_of(t)
        idx = np.arange(i, grid.nt + 1)
        return cls(grid, i, idx, idx)

    @classmethod
    def sampled(cls, grid: Grid, t: float, s_count: int | None = None, q_count: int | None = None) -> "GameGrid":
        """Evenly spaced sets including ``t`` and ``T``; ``None`` means every grid time."""
        i = grid.index_of(t)

        def pick(n):
            if n is None or n >= grid.nt - i + 1:
                return np.arange(i, grid.nt + 1)
            if n < 2:
                raise ConfigurationError("need at least two stopping times (t and T)")
            return np.unique(np.round(np.linspace(i, grid.nt, n)).astype(int))

        return cls(grid, i, pick(s_count), pick(q_count))

    @property
    def t(self) -> float:
        return self.i_t * self.grid.dt

    @property
    def taus(self) -> np.ndarray:
        return np.union1d(self.S, self.Q)


# comparison ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    margin: float
    tol: float
    passed: bool


def _same_data(inst1: MRInstance, inst2: MRInstance) -> bool:
    g1, g2 = inst1.gen, inst2.gen
    same_gen = g1.f == g2.f and g1.g == g2.g and (
        (g1.gamma_row is None and g2.gamma_row is None)
        or (g1.gamma_row is not None and g2.gamma_row is not None
            and np.array_equal(g1.gamma_row, g2.gamma_row)))
    return same_gen and np.array_equal(inst1.terminal_row, inst2.terminal_row)


def compare_loss(inst1: MRInstance, inst2: MRInstance, tol: float | None = None) -> ComparisonReport:
    """With ``L1 <= L2`` and ``R1 <= R2`` the solutions satisfy ``Y2 <= Y1``.

    The ordering is checked on the grid nodes; both instances are solved with
    the linear-y route and the margin is ``min (Y1 - Y2)`` over all nodes.
    """
    g = inst1.grid
    if not g.same_as(inst2.grid):
        raise PreconditionError("instances must share the grid")
    if not (inst1.gen.is_linear_y and inst2.gen.is_linear_y):
        raise PreconditionError("compare_loss needs linear-y catalog generators")
    if not _same_data(inst1, inst2):
        raise PreconditionError("instances must share the terminal and the generator")
    ii = np.arange(g.nt + 1)[:, None]
    x = np.linspace(-3 * g.x_half_width, 3 * g.x_half_width, 241)[None, :]
    eps = 1e-12
    if np.any(inst1.losses.lower(ii, x) > inst2.losses.lower(ii, x) + eps) or \
            np.any(inst1.losses.upper(ii, x) > inst2.losses.upper(ii, x) + eps):
        raise PreconditionError("loss ordering L1 <= L2, R1 <= R2 violated on the sampled net")
    y1 = solve_linear_y(inst1).y.values
    y2 = solve_linear_y(inst2).y.values
    margin = float(np.min(y1 - y2))
    tol = g.tol if tol is None else tol
    return ComparisonReport(margin, tol, margin >= -tol)


@dataclass(frozen=True)
class SandwichReport:
    """``Y_low <= Y <= Y_up`` for the two single-condition systems.

    ``gap_upper = min_t (Y_up - Y)`` and ``gap_lower = min_t (Y - Y_low)``; both
    differences are deterministic in ``x``. A side whose perturbed system is
    not admissible is reported with ``skipped`` set.
    """

    lam: float
    gap_upper: float
    gap_lower: float
    y_upper: np.ndarray | None
    y_lower: np.ndarray | None
    skipped_upper: bool
    skipped_lower: bool
    tol: float
    passed: bool


def sandwich(inst: MRInstance, lam: float = 0.05, sol: MRSolution | None = None,
             tol: float | None = None) -> SandwichReport:
    """Build one solution of each single-condition system and check the ordering.

    Upper bound: only the ``L`` condition is kept; ``A^R`` is replaced by the
    non-minimal ``A^R + lam t`` and ``A^L`` is re-solved from the one-sided
    problem at ``l``. Lower bound: mirrored with ``A^L + lam t`` and ``r``.
    """
    if not inst.gen.is_linear_y:
        raise PreconditionError("sandwich needs a linear-y catalog generator")
    if lam < 0:
        raise ConfigurationError("lam must be nonnegative")
    sol = solve_linear_y(inst) if sol is None else sol
    ctx = sol.context
    if ctx is None:
        raise PreconditionError("solution carries no Skorokhod context")
    g = inst.grid
    tol = g.tol if tol is None else tol
    sk = ctx.skor
    t = g.t
    pert = lam * t
    check = 1e-2 * g.tol
    w = ctx.weight
    pair = ctx.boundaries(g, inst.vb)

    def offset(A):
        return (A[-1] - A) / w

    out = {}
    # upper: free A^R, one-sided l
    try:
        arf = sk.kr + pert
        one = solve_one_sided(ctx.a, ctx.s + arf, pair.lower, "l", tol=inst.skor_tol, times=t,
                              pre_tol=check)
        A = arf - one.kl
        x = ctx.a + (ctx.s[-1] - ctx.s) + (A[-1] - A)
        ok = float(np.min(pair.upper(np.arange(len(t)), x))) >= -check
        out["upper"] = (offset(A) - offset(sk.k)) if ok else None
    except PreconditionError:
        out["upper"] = None
    # lower: free A^L, one-sided r
    try:
        alf = sk.kl + pert
        one = solve_one_sided(ctx.a, ctx.s - alf, pair.upper, "r", tol=inst.skor_tol, times=t,
                              pre_tol=check)
        A = one.kr - alf
        x = ctx.a + (ctx.s[-1] - ctx.s) + (A[-1] - A)
        ok = float(np.max(pair.lower(np.arange(len(t)), x))) <= check
        out["lower"] = (offset(sk.k) - offset(A)) if ok else None
    except PreconditionError:
        out["lower"] = None
    gu = out["upper"]
    gl = out["lower"]
    gap_u = float(np.min(gu)) if gu is not None else np.nan
    gap_l = float(np.min(gl)) if gl is not None else np.nan
    y = sol.y.values
    y_up = y + gu[:, None] if gu is not None else None
    y_low = y - gl[:, None] if gl is not None else None
    passed = (gu is None or gap_u >= -tol) and (gl is None or gap_l >= -tol)
    return SandwichReport(lam, gap_u, gap_l, y_up, y_low, gu is None, gl is None, tol, passed)


# thresholds and the game chain -----------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    """Roots of the four centered operators of ``Ybar`` over the t-grid."""

    r_upper: np.ndarray
    l_upper: np.ndarray
    r_lower: np.ndarray
    l_lower: np.ndarray
    residual: float


def thresholds(sol: MRSolution, inst: MRInstance, tol: float = 1e-10) -> Thresholds:
    """``rbar_t, lbar_t`` (centering by ``E[Ybar_t]``) and ``r_t, l_t`` (by ``-E[-Ybar_t]``)."""
    g, vb = sol.grid, sol.vb
    ybar = sol.bsde.y_field
    res = 0.0
    rows = {}
    for center in ("upper", "lower"):
        pair = build_boundaries(ybar, inst.losses, g, vb, n_offsets=inst.n_offsets, center=center)
        for side, curve in (("r", pair.upper), ("l", pair.lower)):
            root = curve.roots(tol / curve.C_lip)
            res = max(res, float(np.max(np.abs(curve(np.arange(g.nt + 1), root)))))
            rows[side + "_" + center] = root
    return Thresholds(rows["r_upper"], rows["l_upper"], rows["r_lower"], rows["l_lower"], res)


@dataclass(frozen=True)
class GameValues:
    gg: GameGrid
    upper: np.ndarray
    lower: np.ndarray
    supinf_upper: float
    infsup_upper: float
    supinf_lower: float
    infsup_lower: float
    q_opt: float
    s_opt: float
    E_Y: float
    negE_negY: float
    tol: float
    chain_ok: bool
    equality_case: bool
    equality_ok: bool
    minimax_ok: bool

    def to_csv(self, path, s_star=None, q_star=None):
        return write_game_csv(path, self.gg, self.upper, self.lower,
                              [self.supinf_upper, self.infsup_lower, self.E_Y, self.negE_negY,
                               self.s_opt if s_star is None else s_star,
                               self.q_opt if q_star is None else q_star])


def write_game_csv(path, gg: GameGrid, upper, lower, summary):
    from pathlib import Path
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t = gg.grid.t
    lines = ["s,q,upper,lower"]
    for a, s in enumerate(gg.S):
        for b, q in enumerate(gg.Q):
            lines.append(",".join(fmt(v) for v in (t[s], t[q], upper[a, b], lower[a, b])))
    lines.append("")
    lines.append("supinf_upper,infsup_lower,E_Y,negE_negY,s_star,q_star")
    lines.append(",".join(fmt(float(v)) for v in summary))
    path.write_text("\n".join(lines) + "\n")
    return path


def _stop_matrix(gg: GameGrid, J, r_q, l_s, v_T):
    """Entries ``v_T`` if ``s = q = T``; ``J[q] + r_q`` if ``q < T, q <= s``; ``J[s] + l_s`` if ``s < q``."""
    nt = gg.grid.nt
    S = gg.S[:, None]
    Q = gg.Q[None, :]
    out = np.where(S < Q, J[S] + l_s[S], J[Q] + r_q[Q])
    return np.where((S == nt) & (Q == nt), v_T, out)


def optim_bounds(sol: MRSolution, inst: MRInstance, gg: GameGrid, thr: Thresholds | None = None,
                 tol: float | None = None) -> GameValues:
    """Upper and lower game matrices and the chain
    ``inf_s sup_q lower <= -E[-Y_t] <= E[Y_t] <= sup_q inf_s upper``.

    ``J(tau)`` is the (upper or lower) expectation of the accrued generator
    minus ``K_tau - K_t`` on ``[t, tau]``; the stopped thresholds are
    constants and are added outside the expectation.
    """
    g, vb = sol.grid, sol.vb
    if not gg.grid.same_as(g):
        raise AlignmentError("game grid does not match the solution grid")
    thr = thresholds(sol, inst) if thr is None else thr
    tol = game_tol(g) if tol is None else tol
    taus = gg.taus
    i_t = gg.i_t
    terminals = np.zeros((len(taus), g.nx + 1))
    terminals[taus == g.nt] = inst.terminal_row
    J = {}
    vT = {}
    for lower in (False, True):
        rows = dp_window(sol.fine, terminals, taus, i_t, g, vb, lower=lower)
        vals = expect_rows(rows, g, vb, np.full(len(taus), i_t), lower=lower)
        full = np.zeros(g.nt + 1)
        full[taus] = vals
        # J(T) without xi for the r/l branches at T never occurs (those need q < T or s < q <= T)
        J[lower] = full
        vT[lower] = full[g.nt]
    up = _stop_matrix(gg, J[False], thr.r_upper, thr.l_upper, vT[False])
    lo = _stop_matrix(gg, J[True], thr.r_lower, thr.l_lower, vT[True])
    supinf_u = float(np.max(np.min(up, axis=0)))
    infsup_u = float(np.min(np.max(up, axis=1)))
    supinf_l = float(np.max(np.min(lo, axis=0)))
    infsup_l = float(np.min(np.max(lo, axis=1)))
    q_opt = float(g.t[gg.Q[int(np.argmax(np.min(up, axis=0)))]])
    s_opt = float(g.t[gg.S[int(np.argmin(np.max(lo, axis=1)))]])
    c = sol.curves
    ey, ney = float(c.upper_mean[i_t]), float(c.lower_mean[i_t])
    chain = infsup_l <= ney + tol and ney <= ey + tol and ey <= supinf_u + tol
    eq_case = float(np.max(np.abs(c.upper_mean - c.lower_mean))) <= tol
    eq_ok = (not eq_case) or (abs(supinf_u - ey) <= 3 * tol and abs(infsup_l - ey) <= 3 * tol)
    minimax = infsup_u >= supinf_u and infsup_l >= supinf_l
    return GameValues(gg, up, lo, supinf_u, infsup_u, supinf_l, infsup_l, q_opt, s_opt, ey, ney, tol,
                      chain, eq_case, eq_ok, minimax)


# the linear case -----------------------------------------------------------------------


@dataclass(frozen=True)
class LinearGameReport:
    gg: GameGrid
    values: np.ndarray
    supinf: float
    infsup: float
    E_Y: float
    negE_negY: float
    s_star: float
    q_star: float
    saddle_value: float
    brute_s: float
    brute_q: float
    tol: float
    equal_ok: bool
    saddle_ok: bool
    brute_match: bool

    @property
    def passed(self) -> bool:
        return self.equal_ok and self.saddle_ok

    def to_csv(self, path):
        return write_game_csv(path, self.gg, self.values, self.values,
                              [self.supinf, self.infsup, self.E_Y, self.negE_negY, self.s_star, self.q_star])


def check_linear_form(inst: MRInstance):
    """Raise unless ``f = gamma y + f_t`` (no z), ``g = 0`` and the losses are ``x - L_t``, ``x - R_t``."""
    gen = inst.gen
    if gen.f.kind != "affine" or gen.f.uses_z or gen.g.uses_y or gen.g.uses_z or gen.g.coeffs[0] != 0:
        raise PreconditionError("linear game needs f = gamma*y + f_t and g = 0")
    for c in (inst.losses.lower, inst.losses.upper):
        if c.kind != "affine_threshold" or c.slope != 1.0 or not np.all(c.scale == 1.0):
            raise PreconditionError("linear game needs losses of the form x - threshold_t")
    if not float(np.min(inst.losses.lower.threshold - inst.losses.upper.threshold)) > 0:
        raise PreconditionError("linear game needs inf (L_t - R_t) > 0")


def linear_game(inst: MRInstance, gg: GameGrid, sol: MRSolution | None = None,
                tol: float | None = None) -> LinearGameReport:
    """Values ``E[y_t^{s^q}]`` of the stopped equations and the saddle point.

    The stopped terminal is ``xi`` if ``s = q = T``, ``L_s`` if ``s < q`` and
    ``R_q`` if ``q <= s``, ``q < T``.
    """
    check_linear_form(inst)
    g, vb = inst.grid, inst.vb
    if not gg.grid.same_as(g):
        raise AlignmentError("game grid does not match the instance grid")
    sol = solve(inst) if sol is None else sol
    tol = game_tol(g) if tol is None else tol
    Lt = inst.losses.lower.threshold
    Rt = inst.losses.upper.threshold
    nt, i_t = g.nt, gg.i_t
    S, Q = gg.S, gg.Q
    pairs = [(s, q) for s in S for q in Q]
    # identical (tau, terminal) entries share one solve
    keys = {}
    uniq_rows, uniq_tau, which = [], [], []
    for s, q in pairs:
        if s == nt and q == nt:
            key, row = ("xi",), inst.terminal_row
        else:
            c = Lt[s] if s < q else Rt[q]
            key, row = (min(s, q), float(c)), np.full(g.nx + 1, c)
        if key not in keys:
            keys[key] = len(uniq_tau)
            uniq_rows.append(row)
            uniq_tau.append(min(s, q))
        which.append(keys[key])
    rows = stopped_values(np.array(uniq_rows), np.array(uniq_tau), i_t, inst.gen, g, vb)
    vals = expect_rows(rows, g, vb, np.full(len(uniq_tau), i_t))
    V = vals[np.array(which)].reshape(len(S), len(Q))
    supinf = float(np.max(np.min(V, axis=0)))
    infsup = float(np.min(np.max(V, axis=1)))
    c = sol.curves
    ey = float(c.upper_mean[i_t])
    mean = c.upper_mean

    ctol = crossing_tol(g)

    def first(target, pool):
        hit = [i for i in pool if abs(mean[i] - target[i]) <= ctol]
        return hit[0] if hit else nt

    s_star = first(Lt, S)
    q_star = first(Rt, Q)
    a_s = int(np.searchsorted(S, s_star))
    a_q = int(np.searchsorted(Q, q_star))
    v_star = float(V[a_s, a_q])
    saddle = abs(v_star - supinf) <= tol and np.all(V[:, a_q] >= v_star - tol) and np.all(V[a_s, :] <= v_star + tol)
    # brute force: earliest optimizer; ties within 1e-12 count as optimal for the match
    col = np.min(V, axis=0)
    row = np.max(V, axis=1)
    brute_q = float(g.t[Q[int(np.argmax(col))]])
    brute_s = float(g.t[S[int(np.argmin(row))]])
    tie = 1e-12 * (1.0 + abs(supinf))
    match = bool(col[a_q] >= col.max() - tie and row[a_s] <= row.min() + tie)
    equal = abs(supinf - ey) <= tol and abs(infsup - ey) <= tol
    return LinearGameReport(gg, V, supinf, infsup, ey, float(c.lower_mean[i_t]), float(g.t[s_star]),
                            float(g.t[q_star]), v_star, brute_s, brute_q, tol, equal, bool(saddle), match)
