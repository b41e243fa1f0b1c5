"""Doubly mean-reflected G-BSDEs on the lattice.

The equation is

    Y_t = xi + int_t^T f ds + int_t^T g d<B> - int_t^T Z dB - (K_T - K_t) + (A_T - A_t)

with a deterministic ``A = A^R - A^L`` chosen so that
``E[L(t, Y_t)] <= 0 <= E[R(t, Y_t)]`` and ``A^R`` (``A^L``) only grows while
the ``R`` (``L``) constraint binds.

Every route reduces to one step: given a G-BSDE solution ``Ybar`` (without
reflection), tabulate the mean operators

    l(t, x) = E[L(t, x + Ybar_t - E[Ybar_t])],   r(t, x) = E[R(t, x + Ybar_t - E[Ybar_t])]

and solve the deterministic backward Skorokhod problem with
``s_t = E[Ybar_0] - E[Ybar_t]`` and ``a = E[xi]``. Then ``Y = Ybar + A_T - A_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .csvio import write_columns
from .errors import ConfigurationError, GridMismatch, IterationFailure, PreconditionError
from .gbsde import BsdeSolution, FineFields, GeneratorSpec, sweep
from .gcore import (Grid, PayoffSpec, ValueField, VolBounds, as_row, expect_rows, first_difference,
                    g_expectation, gather, second_difference, slice_expect, slice_plan)
from .skorokhod import BoundaryCurve, BoundaryPair, SkorokhodSolution, solve_backward

POLICIES = ("constant", "linear_y", "lipschitz_segmented", "picard")
N_OFFSETS = 41


@dataclass(frozen=True, eq=False)
class MRInstance:
    """Problem data for a doubly mean-reflected G-BSDE.

    ``losses.lower`` is ``L`` and ``losses.upper`` is ``R``; both are indexed by
    output time index. ``tol_flat=None`` selects ``10(h+dt)(1 + TV(A))`` after
    the solve. ``kappa_contraction`` overrides the contraction constant used to
    choose the number of segments.
    """

    terminal: PayoffSpec
    gen: GeneratorSpec
    losses: BoundaryPair
    grid: Grid
    vb: VolBounds
    policy: str = "constant"
    tol_iter: float = 1e-6
    tol_flat: float | None = None
    max_iters: int = 50
    beta: float = 2.0
    kappa_contraction: float | None = None
    n_offsets: int = N_OFFSETS
    skor_tol: float = 1e-10
    admissibility_tol: float = 1e-9

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigurationError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if not self.beta > 1:
            raise ConfigurationError("beta must be > 1")
        if not (self.tol_iter > 0 and self.max_iters >= 1 and self.n_offsets >= 5):
            raise ConfigurationError("need tol_iter > 0, max_iters >= 1 and n_offsets >= 5")
        if self.tol_flat is not None and not self.tol_flat > 0:
            raise ConfigurationError("tol_flat must be positive")
        if self.losses.n != self.grid.nt:
            raise GridMismatch("loss thresholds must have one entry per output time")
        self.grid.check_cfl(self.vb, self.gen.coupling)
        el, er = self.terminal_slacks()
        tol = self.admissibility_tol
        if el > tol or er < -tol:
            raise PreconditionError(
                f"terminal inadmissible: E[L(T, xi)] = {el:.6g}, E[R(T, xi)] = {er:.6g}"
            )

    @property
    def terminal_row(self) -> np.ndarray:
        return as_row(self.terminal, self.grid)

    def terminal_slacks(self) -> tuple[float, float]:
        """``(E[L(T, xi)], E[R(T, xi)])`` on the full lattice."""
        g, n, row = self.grid, self.grid.nt, self.terminal_row
        el = g_expectation(self.losses.lower(n, row), g.T, g, self.vb)
        er = g_expectation(self.losses.upper(n, row), g.T, g, self.vb)
        return el, er

    def with_policy(self, policy: str) -> "MRInstance":
        return replace(self, policy=policy)


@dataclass(frozen=True)
class MeanCurves:
    """Mean rows over the output times."""

    t: np.ndarray
    upper_mean: np.ndarray
    lower_mean: np.ndarray
    slack_L: np.ndarray
    slack_R: np.ndarray

    def __post_init__(self):
        if np.any(self.lower_mean > self.upper_mean + 1e-9 * (1 + np.abs(self.upper_mean))):
            raise PreconditionError("lower mean exceeds upper mean")


@dataclass(frozen=True, eq=False)
class ReflectContext:
    """Deterministic Skorokhod data behind a solution (used by the comparison sandwich).

    In the (possibly transformed) coordinates the solution is
    ``Y^w = ybar + A^w_T - A^w_t`` and the original one is ``Y = Y^w / weight``.
    """

    s: np.ndarray
    a: float
    pair: BoundaryPair | None
    skor: SkorokhodSolution
    ybar: np.ndarray
    weight: np.ndarray
    losses: BoundaryPair | None = None
    i0: int = 0
    n_offsets: int = N_OFFSETS

    def boundaries(self, grid: Grid, vb: VolBounds) -> BoundaryPair:
        """The tabulated pair (built on demand when the fast path skipped it)."""
        if self.pair is not None:
            return self.pair
        idx = np.arange(self.i0, self.i0 + len(self.s))
        pad = float(np.max(np.abs(self.s)))
        return build_boundaries(self.ybar, self.losses, grid, vb, idx=idx, n_offsets=self.n_offsets,
                                extra=[self.a], pad=pad)


@dataclass(frozen=True, eq=False)
class MRSolution:
    """Result ``(Y, Z, K, A)`` of a mean-reflected solve.

    ``bsde`` carries ``Ybar`` and its ``Z``/``a`` fields; ``y`` is
    ``Ybar + delta`` with ``delta_t = A_T - A_t``; ``fine`` holds the fine-step
    fields of ``Y`` used by the game module.
    """

    grid: Grid
    vb: VolBounds
    y: ValueField
    bsde: BsdeSolution
    delta: np.ndarray
    A: np.ndarray
    AR: np.ndarray
    AL: np.ndarray
    curves: MeanCurves
    iterations: list = field(default_factory=list)
    fine: FineFields | None = field(default=None, repr=False)
    policy: str = "constant"
    tol_flat: float = 0.0
    context: ReflectContext | None = field(default=None, repr=False)
    segments: list = field(default_factory=list)

    def __post_init__(self):
        scale = 1.0 + float(np.max(np.abs(self.AR)) + np.max(np.abs(self.AL)))
        if abs(self.AR[0]) > 1e-12 or abs(self.AL[0]) > 1e-12:
            raise PreconditionError("A^R and A^L must start at 0")
        if np.min(np.diff(self.AR)) < -1e-12 * scale or np.min(np.diff(self.AL)) < -1e-12 * scale:
            raise PreconditionError("A^R and A^L must be nondecreasing")
        if np.max(np.abs(self.A - (self.AR - self.AL))) > 1e-12 * scale:
            raise PreconditionError("A != A^R - A^L")

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def y0(self) -> float:
        return self.y.origin(0)

    def to_csv(self, path):
        c = self.curves
        return write_columns(path, ["t", "E_Y", "negE_negY", "A", "A_R", "A_L", "slack_L", "slack_R"],
                             [c.t, c.upper_mean, c.lower_mean, self.A, self.AR, self.AL, c.slack_L, c.slack_R])

    def iterations_to_csv(self, path):
        it = np.arange(1, len(self.iterations) + 1)
        return write_columns(path, ["iter", "delta_beta_norm"], [it, np.asarray(self.iterations, dtype=float)])


# boundary tabulation ----------------------------------------------------------------


def build_boundaries(S, losses: BoundaryPair, grid: Grid, vb: VolBounds, idx=None,
                     n_offsets: int = N_OFFSETS, center: str = "upper", extra=(),
                     pad: float = 0.0) -> BoundaryPair:
    """Tabulate ``l^S(t, x) = E[L(t, x + S_t - m_t)]`` and ``r^S`` likewise.

    ``S`` is a ValueField or array of rows; ``idx`` selects output time indices
    (default all) and the returned pair is indexed ``0..len(idx)-1``. ``m_t``
    is the upper mean ``E[S_t]`` (``center="upper"``) or the lower mean
    ``-E[-S_t]`` (``center="lower"``). The offset nodes span the roots of the
    losses widened by the spread of ``S`` and by ``pad``; points in ``extra``
    are added as nodes so they are represented exactly.
    """
    values = S.values if isinstance(S, ValueField) else np.asarray(S, dtype=float)
    idx = np.arange(grid.nt + 1) if idx is None else np.asarray(idx, dtype=int)
    if values.shape[0] == grid.nt + 1 and len(idx) != grid.nt + 1:
        values = values[idx]
    if values.shape != (len(idx), grid.nx + 1):
        raise GridMismatch("S must have one row per selected time on the main grid")
    if center not in ("upper", "lower"):
        raise ConfigurationError("center must be 'upper' or 'lower'")
    plan = slice_plan(grid, vb, idx)
    s_nodes = gather(values, plan)
    m = slice_expect(s_nodes, plan, vb, lower=(center == "lower"))
    d = s_nodes - m[:, None]
    spread = float(np.max(slice_expect(np.abs(d), plan, vb))) if len(idx) else 0.0
    L, R = losses.lower, losses.upper
    ratio = losses.C_lip / losses.c_lip
    roots_l, roots_r = L.roots()[idx], R.roots()[idx]
    lo = float(min(roots_r.min(), roots_l.min())) - ratio * spread
    hi = float(max(roots_r.max(), roots_l.max())) + ratio * spread
    width = hi - lo
    margin = pad + 0.05 * width + 0.05
    xs = np.linspace(lo - margin, hi + margin, n_offsets)
    ex = np.atleast_1d(np.asarray(extra, dtype=float))
    if ex.size:
        spacing = xs[1] - xs[0]
        keep = [e for e in ex if np.min(np.abs(xs - e)) > 1e-6 * spacing]
        xs = np.unique(np.concatenate([xs, keep]))
    arg = d[:, None, :] + xs[None, :, None]
    ii = idx[:, None, None]
    vals = np.stack([L(ii, arg), R(ii, arg)], axis=1)
    tab = slice_expect(vals, plan, vb)
    tl = BoundaryCurve.tabulated(xs, tab[:, 0, :], L.c_lip, L.C_lip)
    tr = BoundaryCurve.tabulated(xs, tab[:, 1, :], R.c_lip, R.C_lip)
    return BoundaryPair(tl, tr)


def mean_curves(Y, losses: BoundaryPair, grid: Grid, vb: VolBounds) -> MeanCurves:
    """Upper and lower means of ``Y_t`` and the two slacks at every output time."""
    values = Y.values if isinstance(Y, ValueField) else np.asarray(Y, dtype=float)
    plan = slice_plan(grid, vb)
    yn = gather(values, plan)
    ii = plan.idx[:, None]
    stacked = np.stack([yn, losses.lower(ii, yn), losses.upper(ii, yn)], axis=1)
    up = slice_expect(stacked, plan, vb)
    low = slice_expect(yn, plan, vb, lower=True)
    return MeanCurves(grid.t.copy(), up[:, 0], low, up[:, 1], up[:, 2])


# the reflection step ----------------------------------------------------------------


def _pre_tol(grid: Grid) -> float:
    # interpolation slack allowed in the terminal compatibility of a segment
    return 1e-2 * grid.tol


def _reflect(ybar: np.ndarray, losses: BoundaryPair, grid: Grid, vb: VolBounds, i0: int, i1: int,
             n_offsets: int, skor_tol: float) -> ReflectContext:
    """Skorokhod step for ``Ybar`` rows on output indices ``i0..i1``."""
    idx = np.arange(i0, i1 + 1)
    plan = slice_plan(grid, vb, idx)
    nodes = gather(ybar, plan)
    m = slice_expect(nodes, plan, vb)
    s = m[0] - m
    a = float(m[-1])
    # fast path: when the unreflected path is feasible A vanishes and no table is needed
    x_free = a + s[-1] - s
    arg = nodes - m[:, None] + x_free[:, None]
    ii = idx[:, None]
    slack = slice_expect(np.stack([losses.lower(ii, arg), losses.upper(ii, arg)], axis=1), plan, vb)
    if np.all(slack[:, 0] <= 0.0) and np.all(slack[:, 1] >= 0.0):
        zero = np.zeros(len(idx))
        sk = SkorokhodSolution(grid.t[idx], x_free, zero, zero, zero, backward=True, tol=skor_tol)
        return ReflectContext(s=s, a=a, pair=None, skor=sk, ybar=ybar, weight=np.ones(len(idx)),
                              losses=losses, i0=i0, n_offsets=n_offsets)
    pad = float(np.max(np.abs(s))) + float(np.max(np.abs(np.diff(m)), initial=0.0))
    pair = build_boundaries(ybar, losses, grid, vb, idx=idx, n_offsets=n_offsets, extra=[a], pad=pad)
    sk = solve_backward(a, s, pair, tol=skor_tol, times=grid.t[idx], pre_tol=_pre_tol(grid))
    return ReflectContext(s=s, a=a, pair=pair, skor=sk, ybar=ybar, weight=np.ones(len(idx)),
                          losses=losses, i0=i0, n_offsets=n_offsets)


def _offset_fine(delta: np.ndarray, grid: Grid, i0: int, i1: int) -> np.ndarray:
    tf = grid.t_fine[i0 * grid.substeps:i1 * grid.substeps + 1]
    return np.interp(tf, grid.t[i0:i1 + 1], delta)


def _fine_with_offset(fine: FineFields, offset: np.ndarray) -> FineFields:
    return FineFields(fine.i0, fine.i1, fine.y + offset[:, None], fine.z, fine.a, fine.f_acc, fine.g_acc)


def _bsde_from_fine(fine: FineFields, gen: GeneratorSpec, grid: Grid, vb: VolBounds,
                    frozen_last=None) -> BsdeSolution:
    """Output-level ``Ybar`` fields from fine rows on the whole horizon."""
    m = grid.substeps
    y = fine.y[::m]
    last = fine.y[-1]
    z_last = first_difference(last, grid.h)
    yarg = last if frozen_last is None else frozen_last
    g_last = gen.g_eval(grid.T, yarg, z_last)
    a_last = second_difference(last, grid.h) + 2.0 * g_last
    z = np.vstack([fine.z[::m], z_last[None, :]])
    a = np.vstack([fine.a[::m], a_last[None, :]])
    yf = ValueField(y, grid)
    return BsdeSolution(yf, ValueField(z, grid), ValueField(a, grid), yf.origin(0), fine)


def _assemble(inst: MRInstance, ybar_fine: FineFields, AR, AL, iterations, context, policy,
              bsde_gen=None, segments=()) -> MRSolution:
    """Build an :class:`MRSolution` from fine ``Ybar`` fields and the reflection rows."""
    grid, vb = inst.grid, inst.vb
    AR = np.asarray(AR, dtype=float)
    AL = np.asarray(AL, dtype=float)
    A = AR - AL
    delta = A[-1] - A
    gen = inst.gen if bsde_gen is None else bsde_gen
    bsde = _bsde_from_fine(ybar_fine, gen, grid, vb)
    off = _offset_fine(delta, grid, 0, grid.nt)
    y_fine = _fine_with_offset(ybar_fine, off)
    y = ValueField(bsde.y_field.values + delta[:, None], grid)
    curves = mean_curves(y, inst.losses, grid, vb)
    tol_flat = inst.tol_flat
    if tol_flat is None:
        tv = float(AR[-1] + AL[-1])
        tol_flat = grid.tol * (1.0 + tv)
    return MRSolution(grid=grid, vb=vb, y=y, bsde=bsde, delta=delta, A=A, AR=AR, AL=AL, curves=curves,
                      iterations=list(iterations), fine=y_fine, policy=policy, tol_flat=tol_flat,
                      context=context, segments=list(segments))


# solvers ------------------------------------------------------------------------------


def solve_constant(inst: MRInstance) -> MRSolution:
    """Reflected solve for a generator independent of ``(y, z)``."""
    if not inst.gen.is_constant:
        raise ConfigurationError("solve_constant needs a generator independent of (y, z)")
    grid, vb = inst.grid, inst.vb
    fine = sweep(inst.terminal_row, inst.gen, grid, vb)
    ctx = _reflect(fine.y[::grid.substeps], inst.losses, grid, vb, 0, grid.nt, inst.n_offsets, inst.skor_tol)
    return _assemble(inst, fine, ctx.skor.kr, ctx.skor.kl, [], ctx, "constant")


def solve_linear_y(inst: MRInstance) -> MRSolution:
    """Reflected solve for ``f = gamma_t y + f'(t, z)`` and ``g = g(t, z)``.

    With ``a_t = int_0^t gamma`` and ``w = exp(a_t)`` the process ``w Y``
    solves a y-independent problem with terminal ``w_T xi`` and losses
    ``L(t, x / w_t)``; that problem is solved once and transformed back.
    """
    gen, grid, vb = inst.gen, inst.grid, inst.vb
    if not gen.is_linear_y:
        raise ConfigurationError("solve_linear_y needs a generator in the linear-y catalog")
    gamma = gen.gamma_on(grid)
    a_t = cumulative_trapezoid(gamma, grid.t, initial=0.0)
    w = np.exp(a_t)
    tgen = gen.tilted(grid.t, a_t)
    losses = inst.losses
    tlosses = BoundaryPair(losses.lower.with_scale(1.0 / w), losses.upper.with_scale(1.0 / w), losses.sep)
    m = grid.substeps
    tfine = sweep(w[-1] * inst.terminal_row, tgen, grid, vb)
    ctx = _reflect(tfine.y[::m], tlosses, grid, vb, 0, grid.nt, inst.n_offsets, inst.skor_tol)
    ctx = replace(ctx, weight=w)
    # A increments carry the weight at the active (left) node of each step
    dAR = np.diff(ctx.skor.kr) / w[:-1]
    dAL = np.diff(ctx.skor.kl) / w[:-1]
    AR = np.concatenate([[0.0], np.cumsum(dAR)])
    AL = np.concatenate([[0.0], np.cumsum(dAL)])
    A = AR - AL
    delta = A[-1] - A
    ka = ctx.skor.k
    delta_w = ka[-1] - ka
    wf = np.exp(np.interp(grid.t_fine, grid.t, a_t))
    y_fine = (tfine.y + _offset_fine(delta_w, grid, 0, grid.nt)[:, None]) / wf[:, None]
    ybar_fine = y_fine - _offset_fine(delta, grid, 0, grid.nt)[:, None]
    z = tfine.z / wf[1:, None]
    a2 = tfine.a / wf[1:, None]
    n = tfine.z.shape[0]
    f_acc = np.empty_like(z)
    g_acc = np.empty_like(z)
    for j in range(n):
        t = (j + 1) * grid.dt_pde
        f_acc[j] = gen.f_eval(t, y_fine[j + 1], z[j])
        g_acc[j] = gen.g_eval(t, y_fine[j + 1], z[j])
    fine = FineFields(0, grid.nt, ybar_fine, z, a2, f_acc, g_acc)
    return _assemble(inst, fine, AR, AL, [], ctx, "linear_y")


def _beta_gap(y_new, y_old, grid: Grid, vb: VolBounds, idx, beta: float) -> float:
    return float(np.max(expect_rows(np.abs(y_new - y_old) ** beta, grid, vb, idx)))


def _picard_window(inst: MRInstance, i0: int, i1: int, terminal_row):
    """Fixed point ``U -> Y`` on output indices ``i0..i1`` starting from ``U = 0``.

    Returns ``(fine Ybar, context, diagnostics)``; raises
    :class:`IterationFailure` when the tolerance is not met.
    """
    grid, vb, gen = inst.grid, inst.vb, inst.gen
    m = grid.substeps
    idx = np.arange(i0, i1 + 1)
    frozen = np.zeros(((i1 - i0) * m + 1, grid.nx + 1))
    prev = np.zeros((len(idx), grid.nx + 1))
    diags = []
    for _ in range(inst.max_iters):
        fine = sweep(terminal_row, gen, grid, vb, i0, i1, frozen_y=frozen)
        ybar = fine.y[::m]
        ctx = _reflect(ybar, inst.losses, grid, vb, i0, i1, inst.n_offsets, inst.skor_tol)
        delta = ctx.skor.k[-1] - ctx.skor.k
        y = ybar + delta[:, None]
        gap = _beta_gap(y, prev, grid, vb, idx, inst.beta)
        diags.append(gap)
        if not math.isfinite(gap):
            break
        if gap < inst.tol_iter:
            return fine, ctx, diags
        frozen = fine.y + _offset_fine(delta, grid, i0, i1)[:, None]
        prev = y
    raise IterationFailure(
        f"fixed-point iteration on [{grid.t[i0]:.6g}, {grid.t[i1]:.6g}] did not reach "
        f"tol_iter={inst.tol_iter:g} within {inst.max_iters} iterations", diags)


def contraction_constant(inst: MRInstance) -> float:
    """``kappa (1 + 4 C/c)``, or the configured override."""
    if inst.kappa_contraction is not None:
        return float(inst.kappa_contraction)
    k = inst.gen.lipschitz_constant(inst.vb)
    return k * (1.0 + 4.0 * inst.losses.C_lip / inst.losses.c_lip)


def segment_count(c_tilde: float, T: float, nt: int) -> int:
    """Smallest ``n`` with ``c (T/n) exp(c T/n) < 1/2`` (capped at ``nt``)."""
    for n in range(1, nt + 1):
        d = T / n
        if c_tilde * d * math.exp(c_tilde * d) < 0.5:
            return n
    return nt


def _segmented(inst: MRInstance) -> MRSolution:
    grid, vb = inst.grid, inst.vb
    if inst.gen.modulus == "mao":
        raise ConfigurationError("lipschitz_segmented needs a Lipschitz generator; use picard for mao")
    c_tilde = contraction_constant(inst)
    n = segment_count(c_tilde, grid.T, grid.nt)
    cuts = sorted({int(round(k * grid.nt / n)) for k in range(n + 1)})
    m = grid.substeps
    nf = grid.n_fine
    y_f = np.empty((nf + 1, grid.nx + 1))
    z_f = np.empty((nf, grid.nx + 1))
    a_f = np.empty_like(z_f)
    fa_f = np.empty_like(z_f)
    ga_f = np.empty_like(z_f)
    dkr = np.zeros(grid.nt)
    dkl = np.zeros(grid.nt)
    terminal = inst.terminal_row
    diags_all, seg_info = [], []
    for k in range(len(cuts) - 1, 0, -1):
        i0, i1 = cuts[k - 1], cuts[k]
        fine, ctx, diags = _picard_window(inst, i0, i1, terminal)
        delta = ctx.skor.k[-1] - ctx.skor.k
        yfine = fine.y + _offset_fine(delta, grid, i0, i1)[:, None]
        y_f[i0 * m:i1 * m + 1] = yfine
        z_f[i0 * m:i1 * m] = fine.z
        a_f[i0 * m:i1 * m] = fine.a
        fa_f[i0 * m:i1 * m] = fine.f_acc
        ga_f[i0 * m:i1 * m] = fine.g_acc
        dkr[i0:i1] = np.diff(ctx.skor.kr)
        dkl[i0:i1] = np.diff(ctx.skor.kl)
        terminal = yfine[0]
        ratios = [b / a for a, b in zip(diags[1:-1], diags[2:]) if a > 0]
        seg_info.append({"t0": grid.t[i0], "t1": grid.t[i1], "iterations": len(diags),
                         "observed_ratio": max(ratios) if ratios else 0.0,
                         "theoretical": c_tilde * (grid.t[i1] - grid.t[i0])
                         * math.exp(c_tilde * (grid.t[i1] - grid.t[i0]))})
        diags_all.extend(diags)
    AR = np.concatenate([[0.0], np.cumsum(dkr)])
    AL = np.concatenate([[0.0], np.cumsum(dkl)])
    delta = (AR - AL)[-1] - (AR - AL)
    ybar = y_f - _offset_fine(delta, grid, 0, grid.nt)[:, None]
    fine = FineFields(0, grid.nt, ybar, z_f, a_f, fa_f, ga_f)
    seg_info.reverse()
    return _assemble(inst, fine, AR, AL, diags_all, None, "lipschitz_segmented", segments=seg_info)


def solve_fixed_point(inst: MRInstance, policy: str | None = None) -> MRSolution:
    """Fixed-point routes: ``picard`` on the whole horizon or ``lipschitz_segmented``."""
    policy = inst.policy if policy is None else policy
    if policy == "lipschitz_segmented":
        return _segmented(inst)
    if policy != "picard":
        raise ConfigurationError(f"solve_fixed_point expects picard or lipschitz_segmented, got {policy!r}")
    fine, ctx, diags = _picard_window(inst, 0, inst.grid.nt, inst.terminal_row)
    return _assemble(inst, fine, ctx.skor.kr, ctx.skor.kl, diags, ctx, "picard")


def solve(inst: MRInstance) -> MRSolution:
    """Dispatch on ``inst.policy``."""
    if inst.policy == "constant":
        return solve_constant(inst)
    if inst.policy == "linear_y":
        return solve_linear_y(inst)
    return solve_fixed_point(inst)


# checks -----------------------------------------------------------------------------


@dataclass(frozen=True)
class FlatnessReport:
    sum_R: float
    sum_L: float
    violation_L: float
    violation_R: float
    tol_flat: float
    flat_R: bool
    flat_L: bool
    admissible: bool

    @property
    def passed(self) -> bool:
        return self.flat_R and self.flat_L and self.admissible


def with_reflection(sol: MRSolution, inst: MRInstance, AR, AL) -> MRSolution:
    """The solution with ``A^R``, ``A^L`` replaced (``Ybar`` kept); curves are recomputed."""
    return _assemble(inst, sol.bsde.fine, AR, AL, sol.iterations, None, sol.policy)


def check_flatness(sol: MRSolution, tol_flat: float | None = None) -> FlatnessReport:
    """Discrete Stieltjes sums ``sum |slack(t_{i-1})| dA_i`` and constraint violations."""
    tol = sol.tol_flat if tol_flat is None else tol_flat
    c = sol.curves
    sum_r = float(np.sum(np.abs(c.slack_R[:-1]) * np.diff(sol.AR)))
    sum_l = float(np.sum(np.abs(c.slack_L[:-1]) * np.diff(sol.AL)))
    vl = max(0.0, float(np.max(c.slack_L)))
    vr = max(0.0, float(np.max(-c.slack_R)))
    return FlatnessReport(sum_r, sum_l, vl, vr, tol, sum_r <= tol, sum_l <= tol, max(vl, vr) <= tol)


@dataclass(frozen=True)
class StabilityReport:
    lhs: float
    rhs: float
    c_tilde: float
    d_terminal: float
    d_accrual: float
    passed: bool


def a_stability(sol1: MRSolution, sol2: MRSolution, inst1: MRInstance, inst2: MRInstance,
                tol: float | None = None) -> StabilityReport:
    """``sup |A^1 - A^2|`` against ``C (E|xi1 - xi2| + int |dC| + s2 int |dD|)`` with ``C = 4 C_lip / c_lip``.

    The accrual differences are bounded by their sup over nodes at each fine
    step, which dominates the expectation.
    """
    g = inst1.grid
    if not g.same_as(inst2.grid) or not sol1.grid.same_as(sol2.grid):
        raise GridMismatch("a_stability needs a common grid")
    if not np.allclose(inst1.losses.lower(np.arange(g.nt + 1)[:, None], g.x[None, :]),
                       inst2.losses.lower(np.arange(g.nt + 1)[:, None], g.x[None, :])):
        raise GridMismatch("a_stability needs the same losses")
    c_tilde = 4.0 * inst1.losses.C_lip / inst1.losses.c_lip
    lhs = float(np.max(np.abs(sol1.A - sol2.A)))
    d_xi = g_expectation(np.abs(inst1.terminal_row - inst2.terminal_row), g.T, g, inst1.vb)
    f1, f2 = sol1.bsde.fine, sol2.bsde.fine
    df = np.max(np.abs(f1.f_acc - f2.f_acc), axis=1)
    dg = np.max(np.abs(f1.g_acc - f2.g_acc), axis=1)
    acc = float(np.sum(df + inst1.vb.sigma_high_sq * dg) * g.dt_pde)
    rhs = c_tilde * (d_xi + acc)
    tol = g.tol if tol is None else tol
    return StabilityReport(lhs, rhs, c_tilde, d_xi, acc, lhs <= rhs + tol)
