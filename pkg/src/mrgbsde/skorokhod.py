"""Discrete Skorokhod problems with two nonlinear reflecting boundaries.

Conventions. A solution keeps ``l(t, x_t) <= 0 <= r(t, x_t)`` where both
boundary functions are strictly increasing in ``x``. The ``r`` boundary is
enforced by pushing ``x`` up (``kr``), the ``l`` boundary by pulling ``x`` down
(``kl``), and ``k = kr - kl``.

* forward problem: ``x_t = s_t + k_t`` with ``k_0 = 0``;
* backward problem: ``x_t = a + s_T - s_t + k_T - k_t``, solved by reversing
  time, running the forward recursion, and reversing back.

Boundaries are catalog objects (:class:`BoundaryCurve`) whose Lipschitz
constants are declared and verified by sampling when they are built.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryViolation, ConfigurationError, GridMismatch, PreconditionError

_KINDS = ("affine_threshold", "sin_perturbed", "tabulated")
# Sample range used to verify declared constants of catalog boundaries.
_SAMPLE_X = np.linspace(-25.0, 25.0, 201)


@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """A time-indexed, strictly increasing, bi-Lipschitz function ``b(i, x)``.

    Kinds::

        affine_threshold  b(i, x) = slope*u - threshold[i],                 u = scale[i]*x
        sin_perturbed     b(i, x) = slope*(u + gamma*sin(u)) - threshold[i],  |gamma| < 1
        tabulated         piecewise-linear interpolation of table[i, :] on the nodes xs,
                          extended linearly beyond the end nodes

    Build instances with :meth:`affine`, :meth:`sin_perturbed` or
    :meth:`tabulated`; the declared ``c_lip``, ``C_lip`` and growth ``M`` are
    checked on sampled pairs at construction.
    """

    kind: str
    c_lip: float
    C_lip: float
    M: float
    threshold: np.ndarray | None = None
    slope: float = 1.0
    gamma: float = 0.0
    scale: np.ndarray | None = None
    xs: np.ndarray | None = None
    table: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown boundary kind {self.kind!r}")
        if not (0 < self.c_lip <= self.C_lip < math.inf):
            raise BoundaryViolation("need 0 < c_lip <= C_lip < inf")
        if self.kind == "tabulated":
            xs = np.array(self.xs, dtype=float)
            table = np.array(self.table, dtype=float)
            if xs.ndim != 1 or len(xs) < 2 or np.any(np.diff(xs) <= 0):
                raise ConfigurationError("tabulated boundary needs increasing nodes")
            if table.ndim != 2 or table.shape[1] != len(xs) or not np.all(np.isfinite(table)):
                raise ConfigurationError("tabulated boundary table has wrong shape or non-finite values")
            xs.setflags(write=False)
            table.setflags(write=False)
            object.__setattr__(self, "xs", xs)
            object.__setattr__(self, "table", table)
        else:
            thr = np.array(self.threshold, dtype=float)
            if thr.ndim != 1 or len(thr) < 2 or not np.all(np.isfinite(thr)):
                raise ConfigurationError("threshold must be a finite row over the time grid")
            if not self.slope > 0:
                raise BoundaryViolation("boundary slope must be positive")
            if self.kind == "sin_perturbed" and not abs(self.gamma) < 1:
                raise BoundaryViolation("sin_perturbed needs |gamma| < 1")
            scale = np.ones_like(thr) if self.scale is None else np.array(self.scale, dtype=float)
            if scale.shape != thr.shape or np.any(scale <= 0) or not np.all(np.isfinite(scale)):
                raise ConfigurationError("x scale must be a positive row matching the threshold")
            thr.setflags(write=False)
            scale.setflags(write=False)
            object.__setattr__(self, "threshold", thr)
            object.__setattr__(self, "scale", scale)
        self._verify()

    # construction -----------------------------------------------------------------

    @classmethod
    def affine(cls, threshold, slope: float = 1.0, scale=None) -> "BoundaryCurve":
        thr = np.asarray(threshold, dtype=float)
        sc = np.ones_like(thr) if scale is None else np.asarray(scale, dtype=float)
        c, C = slope * float(np.min(sc)), slope * float(np.max(sc))
        M = max(C, float(np.max(np.abs(thr))))
        return cls("affine_threshold", c, C, M, threshold=thr, slope=slope, scale=sc)

    @classmethod
    def sin_perturbed(cls, threshold, gamma: float, slope: float = 1.0, scale=None) -> "BoundaryCurve":
        thr = np.asarray(threshold, dtype=float)
        sc = np.ones_like(thr) if scale is None else np.asarray(scale, dtype=float)
        c = slope * (1 - abs(gamma)) * float(np.min(sc))
        C = slope * (1 + abs(gamma)) * float(np.max(sc))
        M = max(C, float(np.max(np.abs(thr))))
        return cls("sin_perturbed", c, C, M, threshold=thr, slope=slope, gamma=gamma, scale=sc)

    @classmethod
    def tabulated(cls, xs, table, c_lip: float, C_lip: float) -> "BoundaryCurve":
        table = np.asarray(table, dtype=float)
        xs = np.asarray(xs, dtype=float)
        reach = float(np.max(np.abs(table))) + C_lip * float(np.max(np.abs(xs)))
        return cls("tabulated", c_lip, C_lip, max(C_lip, reach), xs=xs, table=table)

    def _verify(self):
        rel = 1e-9
        if self.kind == "tabulated":
            slopes = np.diff(self.table, axis=1) / np.diff(self.xs)[None, :]
            absval = 1e-9 * (1.0 + float(np.max(np.abs(self.table))))
            dx = float(np.min(np.diff(self.xs)))
            lo = self.c_lip * (1 - rel) - absval / dx
            hi = self.C_lip * (1 + rel) + absval / dx
        else:
            y = self(np.arange(self.n + 1)[:, None], _SAMPLE_X[None, :])
            slopes = np.diff(y, axis=1) / np.diff(_SAMPLE_X)[None, :]
            lo, hi = self.c_lip * (1 - rel), self.C_lip * (1 + rel)
            growth = np.abs(y) - self.M * (1 + np.abs(_SAMPLE_X))[None, :]
            if np.max(growth) > 1e-9:
                raise BoundaryViolation("declared growth constant M is violated")
        if np.min(slopes) < lo or np.max(slopes) > hi:
            raise BoundaryViolation(
                f"declared bi-Lipschitz constants [{self.c_lip}, {self.C_lip}] violated: "
                f"sampled slopes in [{np.min(slopes)}, {np.max(slopes)}]"
            )

    # evaluation --------------------------------------------------------------------

    @property
    def n(self) -> int:
        """Number of time steps (rows minus one)."""
        if self.kind == "tabulated":
            return self.table.shape[0] - 1
        return len(self.threshold) - 1

    @property
    def is_catalog(self) -> bool:
        return self.kind != "tabulated"

    def slope_row(self) -> np.ndarray:
        return self.slope * self.scale

    def __call__(self, i, x):
        """Vectorized evaluation; ``i`` and ``x`` broadcast against each other."""
        i = np.asarray(i)
        x = np.asarray(x, dtype=float)
        if self.kind == "tabulated":
            xs = self.xs
            j = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
            w = (x - xs[j]) / (xs[j + 1] - xs[j])
            return self.table[i, j] * (1.0 - w) + self.table[i, j + 1] * w
        u = x * self.scale[i]
        if self.kind == "sin_perturbed":
            u = u + self.gamma * np.sin(u)
        return self.slope * u - self.threshold[i]

    def value(self, i: int, x: float) -> float:
        """Fast scalar evaluation used inside the recursions."""
        if self.kind == "tabulated":
            xs, rows = self._lists()
            j = min(max(bisect.bisect_right(xs, x) - 1, 0), len(xs) - 2)
            row = rows[i]
            w = (x - xs[j]) / (xs[j + 1] - xs[j])
            return row[j] * (1.0 - w) + row[j + 1] * w
        thr, sc = self._lists()
        u = x * sc[i]
        if self.kind == "sin_perturbed":
            u = u + self.gamma * math.sin(u)
        return self.slope * u - thr[i]

    def _lists(self):
        if "lists" not in self._cache:
            if self.kind == "tabulated":
                self._cache["lists"] = (self.xs.tolist(), self.table.tolist())
            else:
                self._cache["lists"] = (self.threshold.tolist(), self.scale.tolist())
        return self._cache["lists"]

    def roots(self, tol: float = 1e-12) -> np.ndarray:
        """Root of ``x -> b(i, x)`` for every time index, by vectorized bisection."""
        idx = np.arange(self.n + 1)
        v0 = self(idx, np.zeros(len(idx)))
        lo = np.where(v0 > 0, -np.abs(v0) / self.c_lip, 0.0)
        hi = np.where(v0 > 0, 0.0, np.abs(v0) / self.c_lip)
        for _ in range(60):
            bad = self(idx, hi) < 0
            if not bad.any():
                break
            hi = np.where(bad, hi + 2.0 * (hi - lo) + 1.0, hi)
        for _ in range(60):
            bad = self(idx, lo) > 0
            if not bad.any():
                break
            lo = np.where(bad, lo - 2.0 * (hi - lo) - 1.0, lo)
        xtol = tol / self.C_lip
        for _ in range(200):
            if np.max(hi - lo) <= xtol:
                break
            mid = 0.5 * (lo + hi)
            pos = self(idx, mid) >= 0
            hi = np.where(pos, mid, hi)
            lo = np.where(pos, lo, mid)
        return 0.5 * (lo + hi)

    # derived curves ----------------------------------------------------------------

    def reversed(self) -> "BoundaryCurve":
        """The curve with time reversed: ``b~(i, x) = b(n - i, x)``."""
        if self.kind == "tabulated":
            return BoundaryCurve("tabulated", self.c_lip, self.C_lip, self.M,
                                 xs=self.xs, table=self.table[::-1])
        return BoundaryCurve(self.kind, self.c_lip, self.C_lip, self.M,
                             threshold=self.threshold[::-1], slope=self.slope,
                             gamma=self.gamma, scale=self.scale[::-1])

    def shifted(self, delta) -> "BoundaryCurve":
        """The curve ``b(i, x) - delta_i`` (a threshold shift)."""
        delta = np.broadcast_to(np.asarray(delta, dtype=float), (self.n + 1,))
        if self.kind == "tabulated":
            return BoundaryCurve.tabulated(self.xs, self.table - delta[:, None], self.c_lip, self.C_lip)
        thr = self.threshold + delta
        if self.kind == "affine_threshold":
            return BoundaryCurve.affine(thr, self.slope, self.scale)
        return BoundaryCurve.sin_perturbed(thr, self.gamma, self.slope, self.scale)

    def with_scale(self, scale) -> "BoundaryCurve":
        """The curve ``b(i, scale_i * x)``; used by the linear-in-y transform."""
        if self.kind == "tabulated":
            raise ConfigurationError("cannot rescale a tabulated boundary")
        sc = self.scale * np.asarray(scale, dtype=float)
        if self.kind == "affine_threshold":
            return BoundaryCurve.affine(self.threshold, self.slope, sc)
        return BoundaryCurve.sin_perturbed(self.threshold, self.gamma, self.slope, sc)

    def window(self, i0: int, i1: int) -> "BoundaryCurve":
        """Restriction to time indices ``i0..i1`` (re-indexed from 0)."""
        if self.kind == "tabulated":
            return BoundaryCurve("tabulated", self.c_lip, self.C_lip, self.M,
                                 xs=self.xs, table=self.table[i0:i1 + 1])
        return BoundaryCurve(self.kind, self.c_lip, self.C_lip, self.M,
                             threshold=self.threshold[i0:i1 + 1], slope=self.slope,
                             gamma=self.gamma, scale=self.scale[i0:i1 + 1])


@dataclass(frozen=True, eq=False)
class BoundaryPair:
    """Two boundaries with ``r - l >= sep > 0`` on the sampled grid.

    ``lower`` is the function ``l`` (kept ``<= 0``) and ``upper`` is ``r``
    (kept ``>= 0``); pointwise ``l <= r``. Pass ``sep=None`` to use the sampled
    infimum as the separation.
    """

    lower: BoundaryCurve
    upper: BoundaryCurve
    sep: float | None = None

    def __post_init__(self):
        l, r = self.lower, self.upper
        if l.n != r.n:
            raise GridMismatch("boundaries live on different time grids")
        if l.is_catalog and r.is_catalog and not np.allclose(l.slope_row(), r.slope_row(), rtol=1e-12, atol=0):
            raise ConfigurationError(
                "BoundaryPair separation invariant violated: boundaries with different "
                "asymptotic slopes cross for large |x|"
            )
        # tabulated curves are only checked on their nodes (extrapolation is linear)
        tab = [b.xs for b in (l, r) if not b.is_catalog]
        xs = np.unique(np.concatenate(tab)) if tab else _SAMPLE_X
        idx = np.arange(l.n + 1)[:, None]
        gap = float(np.min(r(idx, xs[None, :]) - l(idx, xs[None, :])))
        if self.sep is None:
            if not gap > 0:
                raise ConfigurationError(
                    f"BoundaryPair separation invariant violated: inf(r - l) = {gap} <= 0"
                )
            object.__setattr__(self, "sep", gap)
        else:
            sep = float(self.sep)
            if not sep > 0:
                raise ConfigurationError("BoundaryPair separation invariant violated: sep must be > 0")
            if gap < sep * (1 - 1e-9) - 1e-12:
                raise ConfigurationError(
                    f"BoundaryPair separation invariant violated: inf(r - l) = {gap} < sep = {sep}"
                )
            object.__setattr__(self, "sep", sep)

    @property
    def c_lip(self) -> float:
        return min(self.lower.c_lip, self.upper.c_lip)

    @property
    def C_lip(self) -> float:
        return max(self.lower.C_lip, self.upper.C_lip)

    @property
    def n(self) -> int:
        return self.lower.n

    def reversed(self) -> "BoundaryPair":
        return BoundaryPair(self.lower.reversed(), self.upper.reversed(), self.sep)


@dataclass(frozen=True, eq=False)
class SkorokhodSolution:
    """Paths of a discrete Skorokhod problem on the time grid ``t``."""

    t: np.ndarray
    x: np.ndarray
    k: np.ndarray
    kr: np.ndarray
    kl: np.ndarray
    backward: bool = False
    tol: float = 1e-10

    def __post_init__(self):
        for name in ("t", "x", "k", "kr", "kl"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        scale = 1.0 + float(np.max(np.abs(self.kr)) + np.max(np.abs(self.kl)))
        if np.max(np.abs(self.k - (self.kr - self.kl))) > 1e-12 * scale:
            raise BoundaryViolation("k != kr - kl")
        if np.min(np.diff(self.kr)) < -1e-12 * scale or np.min(np.diff(self.kl)) < -1e-12 * scale:
            raise BoundaryViolation("kr and kl must be nondecreasing")

    def active_index(self, i: int) -> int:
        """Grid index whose state is tied to the increment between ``i-1`` and ``i``."""
        return i - 1 if self.backward else i

    def flatness_sums(self, bp: BoundaryPair | None = None, lower=None, upper=None):
        """Stieltjes sums ``sum |r(x)|*dkr`` and ``sum |l(x)|*dkl`` at the active nodes."""
        if bp is not None:
            lower, upper = bp.lower, bp.upper
        n = len(self.t) - 1
        j = np.arange(n) if self.backward else np.arange(1, n + 1)
        sum_r = sum_l = 0.0
        if upper is not None:
            sum_r = float(np.sum(np.abs(upper(j, self.x[j])) * np.diff(self.kr)))
        if lower is not None:
            sum_l = float(np.sum(np.abs(lower(j, self.x[j])) * np.diff(self.kl)))
        return sum_r, sum_l

    def max_violation(self, bp: BoundaryPair | None = None, lower=None, upper=None) -> float:
        """Largest constraint violation ``max(l(x)^+, r(x)^-)`` over the grid."""
        if bp is not None:
            lower, upper = bp.lower, bp.upper
        idx = np.arange(len(self.t))
        v = 0.0
        if lower is not None:
            v = max(v, float(np.max(lower(idx, self.x))))
        if upper is not None:
            v = max(v, float(np.max(-upper(idx, self.x))))
        return max(v, 0.0)

    def to_csv(self, path):
        from .csvio import write_columns
        return write_columns(path, ["t", "x", "k", "kr", "kl"], [self.t, self.x, self.k, self.kr, self.kl])


def _times(n: int, times) -> np.ndarray:
    if times is None:
        return np.linspace(0.0, 1.0, n + 1)
    times = np.asarray(times, dtype=float)
    if times.shape != (n + 1,):
        raise GridMismatch("times must have one entry per path node")
    return times


def _push(b: BoundaryCurve, i: int, x0: float, up: bool, tol: float, c: float, C: float) -> float:
    """Smallest push ``d >= 0`` (to ``tol/C``) restoring the constraint of ``b`` at ``x0``.

    ``up=True``: want ``b(x0 + d) >= 0``; otherwise want ``b(x0 - d) <= 0``.
    The feasible end of the final bracket is returned.
    """
    sign = 1.0 if up else -1.0

    def ok(d):
        v = b.value(i, x0 + sign * d)
        return v >= 0 if up else v <= 0

    hi = abs(b.value(i, x0)) / c
    for _ in range(60):
        if ok(hi):
            break
        hi = 2.0 * hi + 1e-300
    else:
        raise BoundaryViolation(f"bisection bracket failure at time index {i}")
    lo = 0.0
    xtol = tol / C
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if mid == lo and mid == hi:
            break
    return hi


def _forward(s, lower, upper, tol, times=None, backward=False, check_start=True) -> SkorokhodSolution:
    s = np.asarray(s, dtype=float)
    if s.ndim != 1 or len(s) < 2 or not np.all(np.isfinite(s)):
        raise PreconditionError("input path must be a finite row with at least two nodes")
    n = len(s) - 1
    curves = [b for b in (lower, upper) if b is not None]
    if not curves:
        raise ConfigurationError("at least one boundary is required")
    for b in curves:
        if b.n != n:
            raise GridMismatch("boundary and path have different numbers of time steps")
    c = min(b.c_lip for b in curves)
    C = max(b.C_lip for b in curves)
    if check_start:
        if lower is not None and lower.value(0, float(s[0])) > tol:
            raise PreconditionError("incompatible start: l(t_0, s_0) > 0")
        if upper is not None and upper.value(0, float(s[0])) < -tol:
            raise PreconditionError("incompatible start: r(t_0, s_0) < 0")
    sl = s.tolist()
    k = [0.0] * (n + 1)
    kr = [0.0] * (n + 1)
    kl = [0.0] * (n + 1)
    x = [0.0] * (n + 1)
    x[0] = sl[0]
    for i in range(1, n + 1):
        xh = sl[i] + k[i - 1]
        kr[i], kl[i], k[i] = kr[i - 1], kl[i - 1], k[i - 1]
        if upper is not None and upper.value(i, xh) < 0:
            d = _push(upper, i, xh, True, tol, c, C)
            kr[i] += d
            k[i] += d
            if lower is not None and lower.value(i, xh + d) > tol:
                raise BoundaryViolation(f"both boundaries violated at time index {i}")
        elif lower is not None and lower.value(i, xh) > 0:
            d = _push(lower, i, xh, False, tol, c, C)
            kl[i] += d
            k[i] -= d
            if upper is not None and upper.value(i, xh - d) < -tol:
                raise BoundaryViolation(f"both boundaries violated at time index {i}")
        x[i] = sl[i] + k[i]
    return SkorokhodSolution(_times(n, times), np.array(x), np.array(k), np.array(kr),
                             np.array(kl), backward=backward, tol=tol)


def solve_forward(s_path, bp: BoundaryPair, tol: float = 1e-10, times=None) -> SkorokhodSolution:
    """Forward problem ``x_t = s_t + k_t`` with ``k_0 = 0`` and minimal pushes."""
    return _forward(s_path, bp.lower, bp.upper, tol, times)


def _backward(a, s, lower, upper, tol, times, pre_tol=None) -> SkorokhodSolution:
    s = np.asarray(s, dtype=float)
    n = len(s) - 1
    a = float(a)
    pre_tol = tol if pre_tol is None else pre_tol
    if lower is not None and lower.value(n, a) > pre_tol:
        raise PreconditionError("terminal incompatibility: l(T, a) > 0")
    if upper is not None and upper.value(n, a) < -pre_tol:
        raise PreconditionError("terminal incompatibility: r(T, a) < 0")
    s_rev = a + s[n] - s[::-1]
    fw = _forward(s_rev,
                  None if lower is None else lower.reversed(),
                  None if upper is None else upper.reversed(),
                  tol, check_start=False)
    x = fw.x[::-1]
    k = fw.k[n] - fw.k[::-1]
    kr = fw.kr[n] - fw.kr[::-1]
    kl = fw.kl[n] - fw.kl[::-1]
    return SkorokhodSolution(_times(n, times), x, k, kr, kl, backward=True, tol=tol)


def solve_backward(a: float, s_path, bp: BoundaryPair, tol: float = 1e-10, times=None,
                   pre_tol: float | None = None) -> SkorokhodSolution:
    """Backward problem ``x_t = a + s_T - s_t + k_T - k_t`` by time reversal.

    ``pre_tol`` (default ``tol``) is the slack allowed in the terminal
    compatibility check ``l(T, a) <= 0 <= r(T, a)``.
    """
    return _backward(a, s_path, bp.lower, bp.upper, tol, times, pre_tol)


def solve_one_sided(a: float, s_path, boundary: BoundaryCurve, side: str, tol: float = 1e-10,
                    times=None, pre_tol: float | None = None) -> SkorokhodSolution:
    """Backward problem with a single boundary.

    ``side="r"``: keep ``boundary >= 0`` by pushing up (only ``kr`` moves);
    ``side="l"``: keep ``boundary <= 0`` by pulling down (only ``kl`` moves).
    """
    if side == "r":
        return _backward(a, s_path, None, boundary, tol, times, pre_tol)
    if side == "l":
        return _backward(a, s_path, boundary, None, tol, times, pre_tol)
    raise ConfigurationError("side must be 'r' or 'l'")


def sup_distance(b1: BoundaryCurve, b2: BoundaryCurve) -> float:
    """``sup_{t,x} |b1 - b2|``: exact for threshold shifts, sampled otherwise."""
    if b1.n != b2.n:
        raise GridMismatch("boundaries on different time grids")
    if (b1.is_catalog and b2.is_catalog and b1.kind == b2.kind and b1.gamma == b2.gamma
            and np.array_equal(b1.slope_row(), b2.slope_row()) and np.array_equal(b1.scale, b2.scale)):
        return float(np.max(np.abs(b1.threshold - b2.threshold)))
    if b1.is_catalog and b2.is_catalog and not np.allclose(b1.slope_row(), b2.slope_row()):
        return math.inf
    xs = _SAMPLE_X
    for b in (b1, b2):
        if not b.is_catalog:
            xs = np.union1d(xs, b.xs)
    idx = np.arange(b1.n + 1)[:, None]
    return float(np.max(np.abs(b1(idx, xs[None, :]) - b2(idx, xs[None, :]))))


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    passed: bool
    detail: dict = field(default_factory=dict)


def check_stability(sol1: SkorokhodSolution, sol2: SkorokhodSolution, a1: float, a2: float,
                    s1, s2, bp1: BoundaryPair, bp2: BoundaryPair, tol: float = 1e-9) -> BoundReport:
    """Stability bound ``sup|k1-k2| <= 2(C/c)|da| + 4(C/c) sup|ds| + (2/c) max(Lbar, Rbar)``."""
    if len(sol1.t) != len(sol2.t) or not np.allclose(sol1.t, sol2.t):
        raise GridMismatch("solutions live on different grids")
    c = min(bp1.c_lip, bp2.c_lip)
    C = max(bp1.C_lip, bp2.C_lip)
    lbar = sup_distance(bp1.lower, bp2.lower)
    rbar = sup_distance(bp1.upper, bp2.upper)
    ds = float(np.max(np.abs(np.asarray(s1, dtype=float) - np.asarray(s2, dtype=float))))
    lhs = float(np.max(np.abs(sol1.k - sol2.k)))
    rhs = 2 * (C / c) * abs(a1 - a2) + 4 * (C / c) * ds + (2 / c) * max(lbar, rbar)
    return BoundReport(lhs, rhs, lhs <= rhs + tol, {"c": c, "C": C, "Lbar": lbar, "Rbar": rbar, "ds": ds})


@dataclass(frozen=True)
class GrowthReport:
    lhs: np.ndarray
    bound: np.ndarray
    bound_literal: np.ndarray
    passed: bool
    passed_literal: bool


def check_growth(sol: SkorokhodSolution, a: float, s_path, bp: BoundaryPair, tol: float | None = None) -> GrowthReport:
    """Growth bound for the backward problem, checked at every grid time.

    The bound follows from ``k~_t = x~_t - s~_t`` with ``x~_t`` between the two
    boundary roots::

        |k_T - k_t| <= (sup|l(.,0)| + sup|r(.,0)|)/c + (2C/c)|a + s_T - s_t| + tol*(1 + 1/c)

    ``bound_literal`` is the variant with the factor ``C/c`` on the first term
    as well; it coincides with the bound above when ``C = 1`` and is weaker
    than the proof chain when ``C < 1``.
    """
    tol = sol.tol if tol is None else tol
    s = np.asarray(s_path, dtype=float)
    n = len(s) - 1
    idx = np.arange(n + 1)
    c, C = bp.c_lip, bp.C_lip
    l0 = float(np.max(np.abs(bp.lower(idx, np.zeros(n + 1)))))
    r0 = float(np.max(np.abs(bp.upper(idx, np.zeros(n + 1)))))
    drift = np.abs(a + s[n] - s)
    lhs = np.abs(sol.k[n] - sol.k)
    slack = tol * (1 + 1 / c)
    bound = (l0 + r0) / c + 2 * (C / c) * drift + slack
    literal = (C / c) * (l0 + r0 + 2 * drift) + slack
    return GrowthReport(lhs, bound, literal, bool(np.all(lhs <= bound)), bool(np.all(lhs <= literal)))


def random_affine_instance(rng: np.random.Generator, n: int = 50, T: float = 1.0):
    """A random compatible backward instance with affine boundaries.

    Returns ``(a, s_path, BoundaryPair)``. Both boundaries share a slope in
    ``[0.5, 2]``; thresholds are affine in time with a gap of at least 0.2.
    """
    t = np.linspace(0.0, T, n + 1)
    slope = rng.uniform(0.5, 2.0)
    base = rng.uniform(-1.0, 1.0) + rng.uniform(-1.0, 1.0) * t
    gap = rng.uniform(0.2, 1.5) + rng.uniform(0.0, 0.5) * t
    thr_l = base + gap
    thr_r = base
    steps = rng.normal(0.0, rng.uniform(0.05, 0.6) * math.sqrt(T / n), n)
    s = np.concatenate([[0.0], np.cumsum(steps)])
    # terminal value between the two roots
    lo, hi = thr_r[-1] / slope, thr_l[-1] / slope
    a = rng.uniform(lo, hi)
    bp = BoundaryPair(BoundaryCurve.affine(thr_l, slope), BoundaryCurve.affine(thr_r, slope))
    return a, s, bp
