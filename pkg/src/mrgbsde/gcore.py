"""Sublinear expectation engine.

The G-heat equation ``u_t + G(u_xx) = 0`` is solved backward in time with an
explicit monotone finite-difference scheme on a uniform, symmetric space grid.
Because ``G`` is piecewise linear, the per-node supremum over volatility
scenarios is an endpoint selection and needs no inner optimization.

Two evaluation paths exist:

* full-grid sweeps (``solve_g_heat``, ``g_expectation``, ``step_back``), which
  work on the main lattice and are used for value fields;
* batched "slice" expectations (``expect_rows``), which evaluate
  ``E[psi(B_t)]`` for many rows and many times at once on a strided
  sub-lattice whose half-width scales like ``6*sigma_high*sqrt(t)``. Every
  mean functional of a lattice process goes through this path so that the
  boundary tabulations of the reflected solvers stay cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConfigurationError, DomainError

# Constant in the reported tolerance tol = KAPPA_SCHEME * (h + dt).
KAPPA_SCHEME = 10.0
# Cells per side of the strided lattice used by slice expectations.
SLICE_CELLS = 50
# Half-width of the default grid and of slice lattices, in units of sigma*sqrt(t).
WIDTH_SIGMAS = 6.0


@dataclass(frozen=True)
class VolBounds:
    """Variance-rate interval ``[sigma_low_sq, sigma_high_sq]``.

    The interval must be non-degenerate unless ``degenerate=True`` is passed,
    which is reserved for classical-limit comparisons (``VolBounds.constant``).
    """

    sigma_low_sq: float
    sigma_high_sq: float
    degenerate: bool = False

    def __post_init__(self):
        lo, hi = float(self.sigma_low_sq), float(self.sigma_high_sq)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ConfigurationError("VolBounds invariant violated: variance rates must be finite")
        if lo < 0:
            raise ConfigurationError("VolBounds invariant violated: sigma_low_sq must be >= 0")
        if self.degenerate:
            if lo != hi:
                raise ConfigurationError("degenerate VolBounds needs sigma_low_sq == sigma_high_sq")
        elif not lo < hi:
            raise ConfigurationError(
                "VolBounds invariant violated: need 0 <= sigma_low_sq < sigma_high_sq, "
                f"got {lo} and {hi}"
            )
        object.__setattr__(self, "sigma_low_sq", lo)
        object.__setattr__(self, "sigma_high_sq", hi)

    @classmethod
    def constant(cls, sigma_sq: float) -> "VolBounds":
        """Degenerate bounds: the classical Brownian motion with variance rate ``sigma_sq``."""
        return cls(sigma_sq, sigma_sq, degenerate=True)

    @property
    def sigma_high(self) -> float:
        return math.sqrt(self.sigma_high_sq)

    @property
    def sigma_low(self) -> float:
        return math.sqrt(self.sigma_low_sq)


@dataclass(frozen=True)
class Grid:
    """Uniform lattice on ``[0, T] x [-x_half_width, x_half_width]``.

    ``dt = T/nt`` is the output time step. Each output step is split into
    ``substeps`` explicit PDE steps of length ``dt_pde``; the CFL condition is
    imposed on ``dt_pde``. Use :meth:`build` to get a grid whose substep count
    is chosen from the volatility bounds.
    """

    T: float
    nt: int = 200
    nx: int = 400
    x_half_width: float = 6.0
    substeps: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ConfigurationError("grid horizon T must be positive and finite")
        if int(self.nt) != self.nt or self.nt < 2:
            raise ConfigurationError("grid needs an integer nt >= 2")
        if int(self.nx) != self.nx or self.nx < 2 or self.nx % 2:
            raise ConfigurationError("grid needs an even integer nx >= 2 so that x = 0 is a node")
        if not (math.isfinite(self.x_half_width) and self.x_half_width > 0):
            raise ConfigurationError("x_half_width must be positive and finite")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigurationError("substeps must be a positive integer")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "x_half_width", float(self.x_half_width))

    @classmethod
    def build(cls, vb: VolBounds, T: float = 1.0, nt: int = 200, nx: int = 400,
              x_half_width: float | None = None, substeps: int | None = None,
              coupling: float = 0.0) -> "Grid":
        """Grid with the default half-width ``6*sigma_high*sqrt(T)`` and CFL-safe substeps.

        ``coupling`` is the extra margin factor used by the BSDE solver for a
        z-dependent ``g`` (the condition becomes ``dt_pde*s2*(1+2*coupling)/h^2 <= 1``).
        """
        if x_half_width is None:
            x_half_width = WIDTH_SIGMAS * max(vb.sigma_high, 1e-12) * math.sqrt(T)
            if vb.sigma_high == 0:
                x_half_width = WIDTH_SIGMAS * math.sqrt(T)
        h = 2.0 * x_half_width / nx
        dt = T / nt
        if substeps is None:
            need = dt * vb.sigma_high_sq * (1.0 + 2.0 * coupling) / h ** 2
            substeps = max(1, int(math.ceil(need * (1.0 - 1e-12))))
        grid = cls(T=T, nt=nt, nx=nx, x_half_width=x_half_width, substeps=substeps)
        grid.check_cfl(vb, coupling)
        return grid

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def h(self) -> float:
        return 2.0 * self.x_half_width / self.nx

    @property
    def dt_pde(self) -> float:
        return self.dt / self.substeps

    @property
    def n_fine(self) -> int:
        return self.nt * self.substeps

    @property
    def center(self) -> int:
        return self.nx // 2

    @property
    def x(self) -> np.ndarray:
        # integer multiples of h keep the grid exactly symmetric
        return self.h * (np.arange(self.nx + 1) - self.center)

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    @property
    def t_fine(self) -> np.ndarray:
        return self.dt_pde * np.arange(self.n_fine + 1)

    @property
    def tol(self) -> float:
        """Reported scheme tolerance ``KAPPA_SCHEME * (h + dt)``."""
        return KAPPA_SCHEME * (self.h + self.dt)

    def cfl_number(self, vb: VolBounds, coupling: float = 0.0) -> float:
        return self.dt_pde * vb.sigma_high_sq * (1.0 + 2.0 * coupling) / self.h ** 2

    def check_cfl(self, vb: VolBounds, coupling: float = 0.0) -> None:
        c = self.cfl_number(vb, coupling)
        if c > 1.0 + 1e-12:
            raise ConfigurationError(
                f"CFL violated: dt_pde*sigma_high_sq*(1+2*coupling)/h^2 = {c:.4g} > 1"
            )

    def index_of(self, t: float) -> int:
        """Index of grid time ``t``; raises :class:`AlignmentError` off the grid."""
        if not math.isfinite(t):
            raise AlignmentError(f"time {t} is not finite")
        i = int(round(t / self.dt))
        if i < 0 or i > self.nt or abs(i * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise AlignmentError(f"time {t} is not a grid time (dt = {self.dt})")
        return i

    def same_as(self, other: "Grid") -> bool:
        return (self.T, self.nt, self.nx, self.x_half_width, self.substeps) == (
            other.T, other.nt, other.nx, other.x_half_width, other.substeps)


@dataclass(frozen=True)
class ValueField:
    """Values of a function of (t, x) on the output lattice, shape (nt+1, nx+1)."""

    values: np.ndarray
    grid: Grid = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.shape != (self.grid.nt + 1, self.grid.nx + 1):
            raise ConfigurationError(
                f"ValueField shape {arr.shape} does not match grid "
                f"({self.grid.nt + 1}, {self.grid.nx + 1})"
            )
        if not np.all(np.isfinite(arr)):
            raise DomainError("ValueField entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def row(self, i: int) -> np.ndarray:
        return self.values[i]

    def at(self, t: float) -> np.ndarray:
        return self.values[self.grid.index_of(t)]

    def origin(self, i: int = 0) -> float:
        return float(self.values[i, self.grid.center])

    def to_csv(self, path):
        from .csvio import write_columns
        g = self.grid
        tt = np.repeat(g.t, g.nx + 1)
        xx = np.tile(g.x, g.nt + 1)
        return write_columns(path, ["t", "x", "u"], [tt, xx, self.values.ravel()])


_PAYOFF_ARITY = {
    "affine": 2,                 # c0 + c1*x
    "quadratic": 3,              # c0 + c1*x + c2*x^2
    "abs": 3,                    # c0 + c1*|x - k|
    "call": 2,                   # w*max(x - k, 0), coefficients (k, w)
    "bounded_lipschitz_sin": 3,  # c0 + c1*sin(w*x)
}


@dataclass(frozen=True)
class PayoffSpec:
    """Terminal function ``phi`` from a small catalog.

    Coefficient conventions::

        affine                 (c0, c1)      c0 + c1*x
        quadratic              (c0, c1, c2)  c0 + c1*x + c2*x**2
        abs                    (c0, c1, k)   c0 + c1*|x - k|
        call                   (k, w)        w*max(x - k, 0)
        bounded_lipschitz_sin  (c0, c1, w)   c0 + c1*sin(w*x)
    """

    kind: str
    coeffs: tuple

    def __post_init__(self):
        if self.kind not in _PAYOFF_ARITY:
            raise ConfigurationError(f"unknown payoff kind {self.kind!r}")
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) != _PAYOFF_ARITY[self.kind]:
            raise ConfigurationError(
                f"payoff {self.kind!r} needs {_PAYOFF_ARITY[self.kind]} coefficients"
            )
        if not all(math.isfinite(c) for c in coeffs):
            raise ConfigurationError("payoff coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = self.coeffs
        if self.kind == "affine":
            return c[0] + c[1] * x
        if self.kind == "quadratic":
            return c[0] + c[1] * x + c[2] * x * x
        if self.kind == "abs":
            return c[0] + c[1] * np.abs(x - c[2])
        if self.kind == "call":
            return c[1] * np.maximum(x - c[0], 0.0)
        return c[0] + c[1] * np.sin(c[2] * x)

    @property
    def lipschitz_bound(self) -> float:
        c = self.coeffs
        if self.kind == "affine":
            return abs(c[1])
        if self.kind == "quadratic":
            return abs(c[1]) if c[2] == 0 else math.inf
        if self.kind == "abs":
            return abs(c[1])
        if self.kind == "call":
            return abs(c[1])
        return abs(c[1] * c[2])

    def shifted(self, delta: float) -> "PayoffSpec":
        """The payoff ``phi + delta``."""
        c = list(self.coeffs)
        if self.kind == "call":
            raise ConfigurationError("call payoffs have no constant coefficient to shift")
        c[0] += delta
        return PayoffSpec(self.kind, tuple(c))


def as_row(payoff, grid: Grid) -> np.ndarray:
    """Evaluate a payoff (PayoffSpec, callable or row) on the grid nodes."""
    if isinstance(payoff, np.ndarray) or isinstance(payoff, (list, tuple)):
        row = np.array(payoff, dtype=float)
        if row.shape != (grid.nx + 1,):
            raise ConfigurationError(f"row has shape {row.shape}, expected ({grid.nx + 1},)")
    else:
        row = np.broadcast_to(np.asarray(payoff(grid.x), dtype=float), (grid.nx + 1,)).copy()
    if not np.all(np.isfinite(row)):
        raise DomainError("terminal row has non-finite entries")
    return row


def g_eval(a: float, vb: VolBounds) -> float:
    """``G(a) = (sigma_high_sq*a^+ - sigma_low_sq*a^-)/2``."""
    a = float(a)
    if not math.isfinite(a):
        raise DomainError(f"G is undefined at {a}")
    return 0.5 * (vb.sigma_high_sq * max(a, 0.0) - vb.sigma_low_sq * max(-a, 0.0))


def g_apply(a, vb: VolBounds, lower: bool = False) -> np.ndarray:
    """Vectorized ``G``; with ``lower=True`` returns ``-G(-a)``."""
    a = np.asarray(a, dtype=float)
    up, down = 0.5 * vb.sigma_high_sq, 0.5 * vb.sigma_low_sq
    if lower:
        up, down = down, up
    return np.where(a > 0, up * a, down * a)


def second_difference(u: np.ndarray, h: float) -> np.ndarray:
    """Central second difference along the last axis; zero at the two boundary nodes."""
    d2 = np.zeros_like(u, dtype=float)
    d2[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / (h * h)
    return d2


def first_difference(u: np.ndarray, h: float) -> np.ndarray:
    """Central first difference along the last axis, one-sided at the boundary nodes."""
    d = np.empty_like(u, dtype=float)
    d[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * h)
    d[..., 0] = (u[..., 1] - u[..., 0]) / h
    d[..., -1] = (u[..., -1] - u[..., -2]) / h
    return d


def step_back(u_next, f_row, g_row, grid: Grid, vb: VolBounds, dt: float | None = None) -> np.ndarray:
    """One explicit step ``u_prev = u_next + dt*(G(D2 u_next + 2 g) + f)``.

    ``dt`` defaults to the PDE step ``grid.dt_pde``. Raises
    :class:`ConfigurationError` when ``dt*sigma_high_sq/h^2 > 1``.
    """
    u_next = np.asarray(u_next, dtype=float)
    if u_next.shape[-1] != grid.nx + 1:
        raise ConfigurationError("row length must be nx+1")
    dt = grid.dt_pde if dt is None else float(dt)
    if dt * vb.sigma_high_sq / grid.h ** 2 > 1.0 + 1e-12:
        raise ConfigurationError("CFL violated: dt*sigma_high_sq/h^2 > 1")
    a = second_difference(u_next, grid.h) + 2.0 * np.asarray(g_row, dtype=float)
    return u_next + dt * (g_apply(a, vb) + np.asarray(f_row, dtype=float))


def _heat_steps(u: np.ndarray, n: int, lam, vb: VolBounds, lower: bool) -> np.ndarray:
    """Apply ``n`` source-free explicit steps in place; ``lam = dt/h^2`` (broadcastable)."""
    up, down = 0.5 * vb.sigma_high_sq, 0.5 * vb.sigma_low_sq
    if lower:
        up, down = down, up
    if n <= 0:
        return u
    # G(d) = down*d + (up - down)*max(d, 0); buffers avoid temporaries in the loop
    lam_down = lam * down
    lam_diff = lam * (up - down)
    mid = u[..., 1:-1]
    d = np.empty_like(mid)
    p = np.empty_like(mid)
    for _ in range(n):
        np.subtract(u[..., 2:], mid, out=d)
        d -= mid
        d += u[..., :-2]
        np.maximum(d, 0.0, out=p)
        p *= lam_diff
        d *= lam_down
        d += p
        mid += d
    return u


def solve_g_heat(terminal, grid: Grid, vb: VolBounds, lower: bool = False) -> ValueField:
    """Backward sweep of the G-heat equation from ``T`` to 0.

    With ``lower=True`` the sweep computes ``-E[-phi]`` instead.
    """
    grid.check_cfl(vb)
    u = as_row(terminal, grid)
    out = np.empty((grid.nt + 1, grid.nx + 1))
    out[grid.nt] = u
    lam = grid.dt_pde / grid.h ** 2
    for i in range(grid.nt - 1, -1, -1):
        _heat_steps(u, grid.substeps, lam, vb, lower)
        out[i] = u
    return ValueField(out, grid)


def g_expectation(payoff, t: float, grid: Grid, vb: VolBounds, lower: bool = False) -> float:
    """``E[phi(B_t)]`` by a full-grid G-heat solve on ``[0, t]``, read at ``x = 0``."""
    i = grid.index_of(t)
    grid.check_cfl(vb)
    u = as_row(payoff, grid)
    _heat_steps(u, i * grid.substeps, grid.dt_pde / grid.h ** 2, vb, lower)
    return float(u[grid.center])


@dataclass(frozen=True)
class SlicePlan:
    """Strided sub-lattices used to evaluate ``E[psi(B_{t_i})]`` for several times at once.

    For time index ``idx[j]`` the nodes are ``center + k_j*(-c..c)`` on the main
    grid. All times share ``n_sub`` explicit steps, each of length
    ``t_j/n_sub`` on spacing ``k_j*h``; ``lam[j]`` is the ratio of the two.
    """

    idx: np.ndarray
    nodes: np.ndarray
    lam: np.ndarray
    n_sub: int
    cells: int


def slice_plan(grid: Grid, vb: VolBounds, idx=None, cells: int = SLICE_CELLS) -> SlicePlan:
    idx = np.arange(grid.nt + 1) if idx is None else np.atleast_1d(np.asarray(idx, dtype=int))
    half = grid.center
    c = min(cells, half)
    kmax = max(1, half // c)
    t = idx * grid.dt
    want = WIDTH_SIGMAS * vb.sigma_high * np.sqrt(t) / grid.h
    k = np.clip(np.ceil(want / c - 1e-9), 1, kmax).astype(int)
    hs = k * grid.h
    steps = np.ceil(t * vb.sigma_high_sq / hs ** 2 - 1e-9)
    n_sub = int(max(1, steps.max(initial=1)))
    lam = (t / n_sub) / hs ** 2
    nodes = half + k[:, None] * np.arange(-c, c + 1)[None, :]
    return SlicePlan(idx=idx, nodes=nodes, lam=lam, n_sub=n_sub, cells=c)


def gather(rows: np.ndarray, plan: SlicePlan) -> np.ndarray:
    """Pick slice nodes from rows of shape ``(len(idx), ..., nx+1)``."""
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[0]
    mid = rows.shape[1:-1]
    flat = rows.reshape(n, -1, rows.shape[-1])
    picked = np.take_along_axis(flat, plan.nodes[:, None, :], axis=2)
    return picked.reshape((n,) + mid + (plan.nodes.shape[1],))


def slice_expect(values: np.ndarray, plan: SlicePlan, vb: VolBounds, lower: bool = False) -> np.ndarray:
    """Expectations for values already given on the slice nodes, shape ``(len(idx), ..., 2c+1)``."""
    u = np.array(values, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DomainError("non-finite values passed to slice_expect")
    lam = plan.lam.reshape((-1,) + (1,) * (u.ndim - 1))
    _heat_steps(u, plan.n_sub, lam, vb, lower)
    return u[..., plan.cells]


def expect_rows(rows, grid: Grid, vb: VolBounds, idx=None, lower: bool = False) -> np.ndarray:
    """``E[psi(B_{t_i})]`` for rows of shape ``(len(idx), ..., nx+1)`` given on the main grid.

    ``idx`` defaults to every output time. With ``lower=True`` returns ``-E[-psi]``.
    """
    plan = slice_plan(grid, vb, idx)
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] != len(plan.idx) or rows.shape[-1] != grid.nx + 1:
        raise ConfigurationError("rows must have shape (len(idx), ..., nx+1)")
    return slice_expect(gather(rows, plan), plan, vb, lower)


def mean_functional(S, loss, t: float, x_offset, grid: Grid, vb: VolBounds):
    """``E[loss(t, S_t - E[S_t] + x_offset)]`` for a lattice process ``S``.

    ``S`` is a ValueField (or an array of the same shape) and ``loss`` is called
    as ``loss(i, y)`` with the time index ``i``. ``x_offset`` may be an array;
    the result then has its shape.
    """
    i = grid.index_of(t)
    values = S.values if isinstance(S, ValueField) else np.asarray(S, dtype=float)
    plan = slice_plan(grid, vb, [i])
    s_nodes = gather(values[i][None, :], plan)[0]
    m = slice_expect(s_nodes[None, :], plan, vb)[0]
    off = np.asarray(x_offset, dtype=float)
    arg = s_nodes - m + off[..., None]
    vals = np.asarray(loss(i, arg), dtype=float)
    out = slice_expect(vals[None], plan, vb)[0]
    return float(out) if off.ndim == 0 else out


def scheme_tol(grid: Grid) -> float:
    return grid.tol
