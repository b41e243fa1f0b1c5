"""Markovian G-BSDE solver on the lattice.

For ``xi = phi(B_T)`` the solution is ``Y_t = u(t, B_t)`` where ``u`` solves
``u_t + G(u_xx + 2 g) + f = 0``. Each explicit PDE substep reads the later
slice only::

    u_k = u_{k+1} + dt * (G(D2 u_{k+1} + 2 g_{k+1}) + f_{k+1}),   Z_k = D u_{k+1}

The argument ``a = D2 u + 2 g`` handed to ``G`` is stored because it drives
the decreasing process ``K``: along a volatility control ``sigma^2`` the
increment is ``dt * (sigma^2 a / 2 - G(a)) <= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConfigurationError
from .gcore import (Grid, ValueField, VolBounds, as_row, first_difference, g_apply,
                    g_expectation, second_difference)

_FORMS = {"affine", "lipschitz_sin", "mao"}
_E_INV = math.exp(-1.0)


def mao_mu(u):
    """``mu(u) = u(1 - ln u)`` on (0, 1], ``mu(0) = 0``, ``mu(u) = u`` for ``u > 1``."""
    u = np.asarray(u, dtype=float)
    safe = np.where(u > 0, u, 1.0)
    inner = np.where(u > 0, safe * (1.0 - np.log(safe)), 0.0)
    return np.where(u > 1.0, u, inner)


def mao_m(y):
    """Odd extension ``m(y) = sign(y) mu(|y|)``."""
    y = np.asarray(y, dtype=float)
    return np.sign(y) * mao_mu(np.abs(y))


def mao_modulus(r):
    """Concave modulus of continuity of ``m``: ``2 rho(r)`` with
    ``rho(r) = r(1 - ln r)`` on (0, 1/e] continued by its tangent ``r + 1/e``.

    ``rho(0) = 0`` and ``1/rho`` is not integrable at ``0+``.
    """
    r = np.asarray(r, dtype=float)
    safe = np.where(r > 0, r, 1.0)
    small = np.where(r > 0, safe * (1.0 - np.log(safe)), 0.0)
    return 2.0 * np.where(r > _E_INV, r + _E_INV, small)


@dataclass(frozen=True)
class GenForm:
    """One catalog coefficient function of ``(y, z)``::

        affine         a0 + a1*y + a2*z
        lipschitz_sin  a0 + a1*sin(y) + a2*|z|
        mao            a0 + a1*m(y) + a2*z
    """

    kind: str = "affine"
    coeffs: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in _FORMS:
            raise ConfigurationError(f"unknown generator form {self.kind!r}")
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) != 3 or not all(math.isfinite(c) for c in coeffs):
            raise ConfigurationError("generator forms take three finite coefficients")
        object.__setattr__(self, "coeffs", coeffs)

    def __call__(self, y, z):
        a0, a1, a2 = self.coeffs
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.kind == "affine":
            return a0 + a1 * y + a2 * z
        if self.kind == "lipschitz_sin":
            return a0 + a1 * np.sin(y) + a2 * np.abs(z)
        return a0 + a1 * mao_m(y) + a2 * z

    @property
    def uses_y(self) -> bool:
        return self.coeffs[1] != 0.0

    @property
    def uses_z(self) -> bool:
        return self.coeffs[2] != 0.0

    @property
    def y_lipschitz(self) -> float:
        if not self.uses_y:
            return 0.0
        return math.inf if self.kind == "mao" else abs(self.coeffs[1])

    @property
    def z_lipschitz(self) -> float:
        return abs(self.coeffs[2])

    def without_y(self) -> "GenForm":
        return GenForm(self.kind, (self.coeffs[0], 0.0, self.coeffs[2]))


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """Generator pair ``(f, g)`` of the equation
    ``dY = -f dt - g d<B> + Z dB + dK``.

    ``gamma_row`` (with ``gamma_times``) adds a deterministic term
    ``gamma_t * y`` to ``f``. ``tilt`` is a pair ``(times, a_t)`` used by the
    linear-in-y transform: with ``w = exp(a_t)`` the forms are evaluated as
    ``w * form(y/w, z/w)``. ``kappa`` is the declared z-Lipschitz constant.
    """

    f: GenForm = field(default_factory=GenForm)
    g: GenForm = field(default_factory=GenForm)
    kappa: float | None = None
    gamma_row: np.ndarray | None = None
    gamma_times: np.ndarray | None = None
    tilt: tuple | None = None

    def __post_init__(self):
        zl = max(self.f.z_lipschitz, self.g.z_lipschitz)
        if self.kappa is None:
            object.__setattr__(self, "kappa", zl)
        elif self.kappa < zl * (1 - 1e-12):
            raise ConfigurationError(f"declared kappa {self.kappa} is below the z-Lipschitz constant {zl}")
        if self.gamma_row is not None:
            row = np.array(self.gamma_row, dtype=float)
            times = np.array(self.gamma_times, dtype=float) if self.gamma_times is not None else None
            if times is None or times.shape != row.shape or not np.all(np.isfinite(row)):
                raise ConfigurationError("gamma_row needs matching gamma_times and finite values")
            object.__setattr__(self, "gamma_row", row)
            object.__setattr__(self, "gamma_times", times)
        self._verify()

    def _verify(self):
        # sampled z-increments against the declared kappa
        rng = np.random.default_rng(12345)
        y = rng.uniform(-5, 5, 256)
        z1 = rng.uniform(-5, 5, 256)
        z2 = rng.uniform(-5, 5, 256)
        for form in (self.f, self.g):
            dz = np.abs(form(y, z1) - form(y, z2))
            if np.any(dz > self.kappa * np.abs(z1 - z2) * (1 + 1e-12) + 1e-12):
                raise ConfigurationError("declared kappa does not bound the sampled z-increments")
            if form.kind == "mao":
                y2 = rng.uniform(-3, 3, 256)
                dy = np.abs(form(y, z1) - form(y2, z1))
                bound = abs(form.coeffs[1]) * mao_modulus(np.abs(y - y2))
                if np.any(dy > bound + 1e-12):
                    raise ConfigurationError("mao form violates its declared modulus")

    @property
    def modulus(self) -> str:
        return "mao" if "mao" in (self.f.kind, self.g.kind) and (self.f.uses_y or self.g.uses_y) else "lipschitz"

    @property
    def coupling(self) -> float:
        """z-slope of ``g``; enters the CFL margin."""
        return self.g.z_lipschitz

    def _gamma(self, t):
        if self.gamma_row is None:
            return 0.0
        return float(np.interp(t, self.gamma_times, self.gamma_row))

    def _weight(self, t):
        if self.tilt is None:
            return 1.0
        times, vals = self.tilt
        return math.exp(float(np.interp(t, times, vals)))

    def f_eval(self, t: float, y, z):
        w = self._weight(t)
        out = self.f(np.asarray(y) / w, np.asarray(z) / w) * w if w != 1.0 else self.f(y, z)
        if self.gamma_row is not None:
            out = out + self._gamma(t) * np.asarray(y, dtype=float)
        return out

    def g_eval(self, t: float, y, z):
        w = self._weight(t)
        return self.g(np.asarray(y) / w, np.asarray(z) / w) * w if w != 1.0 else self.g(y, z)

    @property
    def is_constant(self) -> bool:
        """True when neither f nor g depends on (y, z)."""
        no_gamma = self.gamma_row is None or not np.any(self.gamma_row)
        return not (self.f.uses_y or self.f.uses_z or self.g.uses_y or self.g.uses_z) and no_gamma

    @property
    def is_linear_y(self) -> bool:
        """True for ``f = gamma_t y + f'(t, z)`` and ``g = g(t, z)``."""
        if self.g.uses_y:
            return False
        if self.f.uses_y and self.f.kind != "affine":
            return False
        if self.f.uses_y and self.gamma_row is not None:
            return False
        return True

    def y_lipschitz(self, vb: VolBounds) -> float:
        gl = self.g.y_lipschitz * vb.sigma_high_sq
        fl = self.f.y_lipschitz
        if self.gamma_row is not None:
            fl += float(np.max(np.abs(self.gamma_row)))
        return fl + gl

    def lipschitz_constant(self, vb: VolBounds) -> float:
        """Joint constant ``kappa`` with ``|f - f'| + s2|g - g'| <= kappa(|dy| + |dz|)``."""
        zl = self.f.z_lipschitz + vb.sigma_high_sq * self.g.z_lipschitz
        return max(self.y_lipschitz(vb), zl)

    def gamma_on(self, grid: Grid) -> np.ndarray:
        """``gamma_t`` on the output time grid (linear-y catalog only)."""
        if not self.is_linear_y:
            raise ConfigurationError("generator is not in the linear-y catalog")
        if self.gamma_row is not None:
            return np.interp(grid.t, self.gamma_times, self.gamma_row)
        return np.full(grid.nt + 1, self.f.coeffs[1] if self.f.kind == "affine" else 0.0)

    def linear_part_removed(self) -> "GeneratorSpec":
        """The pair ``(f', g)`` with the ``gamma_t y`` term dropped."""
        return GeneratorSpec(self.f.without_y(), self.g, kappa=self.kappa)

    def tilted(self, times, a_vals) -> "GeneratorSpec":
        """Transformed generator ``e^{a_t} f'(t, e^{-a_t} z)`` (same for g)."""
        base = self.linear_part_removed()
        return GeneratorSpec(base.f, base.g, kappa=base.kappa,
                             tilt=(np.asarray(times, dtype=float), np.asarray(a_vals, dtype=float)))


@dataclass(frozen=True, eq=False)
class FineFields:
    """Fields at PDE-substep resolution on output indices ``i0..i1``.

    ``y`` has one row per fine node; ``z``, ``a``, ``f_acc``, ``g_acc`` have one
    row per substep ``k`` (the data used to go from node ``k+1`` to ``k``).
    """

    i0: int
    i1: int
    y: np.ndarray
    z: np.ndarray
    a: np.ndarray
    f_acc: np.ndarray
    g_acc: np.ndarray


def sweep(terminal_row, gen: GeneratorSpec, grid: Grid, vb: VolBounds, i0: int = 0,
          i1: int | None = None, frozen_y=None) -> FineFields:
    """Backward sweep on output indices ``[i0, i1]`` starting from ``terminal_row`` at ``i1``.

    ``frozen_y`` (fine rows aligned with the sweep) replaces the y-argument of
    the generator, which is how the fixed-point solvers freeze the previous
    iterate.
    """
    i1 = grid.nt if i1 is None else i1
    grid.check_cfl(vb, gen.coupling)
    m = grid.substeps
    n = (i1 - i0) * m
    nx1 = grid.nx + 1
    y = np.empty((n + 1, nx1))
    z = np.empty((n, nx1))
    a = np.empty((n, nx1))
    f_acc = np.empty((n, nx1))
    g_acc = np.empty((n, nx1))
    y[n] = terminal_row
    dt, h = grid.dt_pde, grid.h
    for j in range(n - 1, -1, -1):
        u = y[j + 1]
        t = (i0 * m + j + 1) * dt
        zj = first_difference(u, h)
        yarg = u if frozen_y is None else frozen_y[j + 1]
        fj = gen.f_eval(t, yarg, zj)
        gj = gen.g_eval(t, yarg, zj)
        aj = second_difference(u, h) + 2.0 * gj
        y[j] = u + dt * (g_apply(aj, vb) + fj)
        z[j], a[j], f_acc[j], g_acc[j] = zj, aj, fj, gj
    if not np.all(np.isfinite(y[0])):
        raise ConfigurationError("BSDE sweep produced non-finite values")
    return FineFields(i0, i1, y, z, a, f_acc, g_acc)


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    """Lattice solution of a G-BSDE on the whole horizon."""

    y_field: ValueField
    z_field: ValueField
    a_field: ValueField
    y0: float
    fine: FineFields = field(repr=False)


def _output_fields(fine: FineFields, gen: GeneratorSpec, grid: Grid):
    m = grid.substeps
    rows = slice(0, None, m)
    y_out = fine.y[rows]
    z_last = first_difference(fine.y[-1], grid.h)
    t_last = fine.i1 * grid.dt
    g_last = gen.g_eval(t_last, fine.y[-1], z_last)
    a_last = second_difference(fine.y[-1], grid.h) + 2.0 * g_last
    z_out = np.vstack([fine.z[rows], z_last[None, :]])
    a_out = np.vstack([fine.a[rows], a_last[None, :]])
    return y_out, z_out, a_out


def solve_bsde(terminal, gen: GeneratorSpec, grid: Grid, vb: VolBounds, frozen_y=None) -> BsdeSolution:
    """Solve the G-BSDE with terminal ``phi(B_T)`` on the whole grid."""
    row = as_row(terminal, grid)
    fine = sweep(row, gen, grid, vb, frozen_y=frozen_y)
    y, z, a = _output_fields(fine, gen, grid)
    yf = ValueField(y, grid)
    return BsdeSolution(yf, ValueField(z, grid), ValueField(a, grid), yf.origin(0), fine)


@dataclass(frozen=True, eq=False)
class ControlField:
    """Volatility selections ``sigma^2(t_i, x_j)`` for steps ``i = 0..nt-1``."""

    values: np.ndarray
    vb: VolBounds

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        lo, hi = self.vb.sigma_low_sq, self.vb.sigma_high_sq
        if v.ndim != 2 or np.any(v < lo - 1e-15) or np.any(v > hi + 1e-15):
            raise ConfigurationError("control entries must lie in [sigma_low_sq, sigma_high_sq]")
        object.__setattr__(self, "values", v)

    @classmethod
    def random(cls, rng, grid: Grid, vb: VolBounds) -> "ControlField":
        u = rng.uniform(vb.sigma_low_sq, vb.sigma_high_sq, (grid.nt, grid.nx + 1))
        return cls(u, vb)

    @classmethod
    def constant(cls, grid: Grid, vb: VolBounds, s2: float) -> "ControlField":
        return cls(np.full((grid.nt, grid.nx + 1), s2), vb)

    @classmethod
    def argmax(cls, sol: BsdeSolution, vb: VolBounds) -> "ControlField":
        a = sol.a_field.values[:-1]
        return cls(np.where(a > 0, vb.sigma_high_sq, vb.sigma_low_sq), vb)


def realize_k(sol: BsdeSolution, ctrl: ControlField, grid: Grid, vb: VolBounds, path=None) -> np.ndarray:
    """Cumulative ``K`` along a node path under a control.

    ``path`` holds one spatial node index per output time (default: the
    origin). Increment at step ``i``: ``dt*(sigma^2 a/2 - G(a))`` evaluated at
    ``(t_i, x_{path_i})``.
    """
    path = np.full(grid.nt + 1, grid.center) if path is None else np.asarray(path, dtype=int)
    i = np.arange(grid.nt)
    a = sol.a_field.values[i, path[:-1]]
    s2 = ctrl.values[i, path[:-1]]
    inc = grid.dt * (0.5 * s2 * a - g_apply(a, vb))
    return np.concatenate([[0.0], np.cumsum(inc)])


def k_increment_field(sol: BsdeSolution, ctrl: ControlField, grid: Grid, vb: VolBounds) -> np.ndarray:
    """Per-node ``K`` increments for every step, shape ``(nt, nx+1)``."""
    a = sol.a_field.values[:-1]
    return grid.dt * (0.5 * ctrl.values * a - g_apply(a, vb))


def dp_window(fine: FineFields, terminals, tau_idx, i_t: int, grid: Grid, vb: VolBounds,
              accrue: bool = True, residual: bool = True, lower: bool = False) -> np.ndarray:
    """Batched dynamic programming for functionals
    ``int_t^tau f dr + int_t^tau g d<B> - (K_tau - K_t) + terminal(B_tau)``.

    Row ``b`` starts from ``terminals[b]`` at output index ``tau_idx[b]`` and is
    propagated back to ``i_t`` at fine resolution. With ``lower=True`` the
    volatility is minimized instead (the value ``-E_t[-X]``). Because every
    per-node objective is affine in ``sigma^2`` the optimization reduces to
    ``G`` (or ``-G(-.)``) applied to ``D2 W + 2 g - a``.
    """
    W = np.array(terminals, dtype=float)
    tau_idx = np.asarray(tau_idx, dtype=int)
    m = grid.substeps
    if np.any(tau_idx < i_t) or np.any(tau_idx > fine.i1) or i_t < fine.i0:
        raise AlignmentError("window [t, tau] must lie inside the solved range")
    tau_f = tau_idx * m
    dt, h = grid.dt_pde, grid.h
    for k in range(int(tau_f.max()) - 1, i_t * m - 1, -1):
        act = tau_f > k
        if not act.any():
            continue
        j = k - fine.i0 * m
        arg = second_difference(W, h)
        base = 0.0
        if accrue:
            arg = arg + 2.0 * fine.g_acc[j]
            base = base + fine.f_acc[j]
        if residual:
            arg = arg - fine.a[j]
            base = base + g_apply(fine.a[j], vb)
        inc = dt * (base + g_apply(arg, vb, lower=lower))
        W = np.where(act[:, None], W + inc, W)
    return W


def expect_with_k(sol, terminal_row, t: float, tau: float, grid: Grid, vb: VolBounds,
                  accrue: bool = True, residual: bool = True, lower: bool = False) -> np.ndarray:
    """Row ``x -> E_t[functional]`` on ``[t, tau]`` (see :func:`dp_window`).

    ``sol`` is a :class:`BsdeSolution` or anything with a ``fine`` attribute.
    Read the value at ``x = 0`` with ``row[grid.center]``.
    """
    i_t, i_tau = grid.index_of(t), grid.index_of(tau)
    if i_tau < i_t:
        raise AlignmentError("need t <= tau")
    row = as_row(terminal_row, grid)
    return dp_window(sol.fine, row[None, :], [i_tau], i_t, grid, vb, accrue, residual, lower)[0]


def k_sup_dp(sol, grid: Grid, vb: VolBounds) -> float:
    """Max over controls of ``E[K_T - K_0]`` by dynamic programming (a G-martingale check)."""
    fine = sol.fine
    W = np.zeros(grid.nx + 1)
    dt, h = grid.dt_pde, grid.h
    for j in range(fine.a.shape[0] - 1, -1, -1):
        a = fine.a[j]
        W = W + dt * (g_apply(second_difference(W, h) + a, vb) - g_apply(a, vb))
    return float(W[grid.center])


def stopped_values(terminals, tau_idx, i_t: int, gen: GeneratorSpec, grid: Grid, vb: VolBounds) -> np.ndarray:
    """Batched plain G-BSDE solves stopped at ``tau_idx[b]`` with terminal rows ``terminals[b]``.

    Returns the rows at output index ``i_t``.
    """
    grid.check_cfl(vb, gen.coupling)
    W = np.array(terminals, dtype=float)
    tau_f = np.asarray(tau_idx, dtype=int) * grid.substeps
    dt, h = grid.dt_pde, grid.h
    for k in range(int(tau_f.max()) - 1, i_t * grid.substeps - 1, -1):
        act = tau_f > k
        if not act.any():
            continue
        t = (k + 1) * dt
        z = first_difference(W, h)
        fa = gen.f_eval(t, W, z)
        ga = gen.g_eval(t, W, z)
        new = W + dt * (g_apply(second_difference(W, h) + 2.0 * ga, vb) + fa)
        W = np.where(act[:, None], new, W)
    return W


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    flagged: bool


def check_apriori(sol: BsdeSolution, terminal, gen: GeneratorSpec, grid: Grid, vb: VolBounds,
                  alpha: float = 2.0, kappa_bound: float = 10.0) -> BoundCheck:
    """Diagnostic a-priori bound ``|Y_0|^alpha <= kappa_bound * E[|xi|^alpha + int |h|^alpha ds]``.

    ``h_s = |f(s,0,0)| + sigma_high_sq*|g(s,0,0)|``. Exceeding the configured
    constant sets ``flagged``; nothing is raised.
    """
    row = as_row(terminal, grid)
    ex = g_expectation(np.abs(row) ** alpha, grid.T, grid, vb)
    ts = grid.t
    hs = np.array([abs(float(np.mean(gen.f_eval(t, 0.0, 0.0))))
                   + vb.sigma_high_sq * abs(float(np.mean(gen.g_eval(t, 0.0, 0.0)))) for t in ts])
    integral = float(np.trapezoid(hs ** alpha, ts))
    lhs = abs(sol.y0) ** alpha
    rhs = kappa_bound * (ex + integral)
    return BoundCheck(lhs, rhs, lhs > rhs)


def check_perturbation(sol1: BsdeSolution, sol2: BsdeSolution, eps: float, kappa_bound: float = 10.0) -> BoundCheck:
    """Diagnostic stability ``sup |Y1 - Y2| <= kappa_bound * eps`` for a terminal perturbation ``eps``."""
    lhs = float(np.max(np.abs(sol1.y_field.values - sol2.y_field.values)))
    rhs = kappa_bound * eps
    return BoundCheck(lhs, rhs, lhs > rhs)
