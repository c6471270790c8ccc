"""Lift G of a divergence field: the H^1_0(O) solution of  G'' - G = (g)'  per time slice.

The enclosing interval O extends the domain by half its diameter on both
sides. The divergence field is extended to O by a smooth cutoff that equals
one on the closed domain and vanishes before the ends of O.

Discretization: linear finite elements with consistent mass,
``int G' phi' + G phi = int g phi'`` for every interior hat ``phi``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import eigvals_banded, solve_banded

from .coefficients import SeparableField
from .geometry import INTERVAL, DomainSpec

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
# 3-point Gauss-Legendre on [0, 1]
_GL_X = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


class LiftError(RuntimeError):
    pass


@dataclass(frozen=True)
class LiftSlice:
    x: NDArray[np.float64]
    values: NDArray[np.float64]
    gradient: NDArray[np.float64]
    residual: float
    tol: float
    cond: float

    @property
    def ok(self) -> bool:
        return self.residual <= self.tol


@dataclass(frozen=True)
class LiftField:
    o_grid: NDArray[np.float64]
    t_slices: NDArray[np.float64]
    values: NDArray[np.float64]  # (nt, nx)
    gradient: NDArray[np.float64]
    time_derivative: NDArray[np.float64]
    provenance: str = "numeric"
    residuals: NDArray[np.float64] = field(default=None, repr=False)
    cond: float = 1.0
    extension: str = "natural"

    @property
    def bounds(self) -> dict[str, float]:
        """sup |G|, sup |grad G|, sup |dG/dt| over the stored grid."""
        return {
            "G": float(np.max(np.abs(self.values))),
            "grad": float(np.max(np.abs(self.gradient))),
            "dt": float(np.max(np.abs(self.time_derivative))),
        }

    def restricted(self, lo: float, hi: float) -> LiftField:
        m = (self.o_grid >= lo - 1e-12) & (self.o_grid <= hi + 1e-12)
        return LiftField(
            self.o_grid[m], self.t_slices, self.values[:, m], self.gradient[:, m],
            self.time_derivative[:, m], self.provenance, self.residuals, self.cond, self.extension,
        )


def enclosing_interval(dom: DomainSpec, margin: float = 0.5) -> tuple[float, float]:
    if dom.kind != INTERVAL:
        raise LiftError("the finite-element lift is implemented for intervals only")
    a, b = dom.params
    m = margin * (b - a)
    return float(a - m), float(b + m)


def _assemble(nodes: int, h: float):
    """Banded (upper form) matrix of int G'phi' + G phi on interior hats."""
    n = nodes - 2
    ab = np.empty((2, n))
    ab[1] = 2.0 / h + 4.0 * h / 6.0
    ab[0] = -1.0 / h + h / 6.0
    ab[0, 0] = 0.0
    return ab


def _load(g_slice: Callable[[NDArray], NDArray], x: NDArray) -> NDArray:
    """int g phi_i' over the two elements of each interior hat."""
    h = x[1] - x[0]
    q = x[:-1, None] + h * _GL_X[None, :]
    gv = np.asarray(g_slice(q[..., None]), dtype=np.float64)
    gv = gv.reshape(q.shape + (-1,))[..., 0] if gv.ndim == q.ndim + 1 else gv.reshape(q.shape)
    elem = h * (gv @ _GL_W)  # int_e g
    return (elem[:-1] - elem[1:]) / h


def _condition(ab: NDArray) -> float:
    n = ab.shape[1]
    if n == 1:
        return 1.0
    lo = eigvals_banded(ab, select="i", select_range=(0, 0))[0]
    hi = eigvals_banded(ab, select="i", select_range=(n - 1, n - 1))[0]
    return float(hi / lo)


def _matvec(ab: NDArray, v: NDArray) -> NDArray:
    out = ab[1] * v
    out[:-1] += ab[0, 1:] * v[1:]
    out[1:] += ab[0, 1:] * v[:-1]
    return out


def solve_lift_slice(
    g_slice: Callable[[NDArray], NDArray],
    O: tuple[float, float],
    nodes: int,
    cond: float | None = None,
) -> LiftSlice:
    """One time slice: node values (zero at both ends of O) and nodal gradient."""
    if nodes < 3:
        raise LiftError("nodes must be >= 3")
    lo, hi = O
    if not hi > lo:
        raise LiftError("enclosing interval must have lo < hi")
    x = np.linspace(lo, hi, nodes)
    h = x[1] - x[0]
    ab = _assemble(nodes, h)
    rhs = _load(g_slice, x)
    # lower diagonal mirrors the upper one
    full = np.zeros((3, nodes - 2))
    full[0] = ab[0]
    full[1] = ab[1]
    full[2, :-1] = ab[0, 1:]
    inner = solve_banded((1, 1), full, rhs)
    G = np.zeros(nodes)
    G[1:-1] = inner
    c = _condition(ab) if cond is None else cond
    res = float(np.max(np.abs(_matvec(ab, inner) - rhs))) if rhs.size else 0.0
    scale = max(float(np.max(np.abs(rhs))) if rhs.size else 0.0, float(np.max(np.abs(ab[1]))) * float(np.max(np.abs(inner), initial=0.0)))
    tol = 10.0 * EPS * c * max(scale, 1e-300)
    if res > tol:
        logger.warning("lift slice residual %.3e exceeds tolerance %.3e", res, tol)
    return LiftSlice(x, G, np.gradient(G, x, edge_order=2), res, tol, c)


def smooth_cutoff(s: ArrayLike, width: float) -> NDArray[np.float64]:
    """C-infinity step: 1 for s <= 0, 0 for s >= width."""
    s = np.asarray(s, dtype=np.float64) / width
    out = np.zeros_like(s)
    out[s <= 0] = 1.0
    mid = (s > 0) & (s < 1)
    u = s[mid]
    a = np.exp(-1.0 / (1.0 - u))
    b = np.exp(-1.0 / u)
    out[mid] = a / (a + b)
    return out


def smooth_extension(
    g: Callable[[NDArray, NDArray], NDArray],
    dom: DomainSpec,
    O: tuple[float, float],
    mode: str = "natural",
    width_fraction: float = 0.8,
) -> Callable[[NDArray, NDArray], NDArray]:
    """Extend g from the closed domain to O, vanishing near the ends of O.

    ``natural`` evaluates g's own formula outside the domain; ``projected``
    freezes g at the nearest boundary point. Both are multiplied by a smooth
    cutoff in the distance to the domain.
    """
    a, b = dom.params
    width = width_fraction * min(a - O[0], O[1] - b)
    if mode not in ("natural", "projected"):
        raise ValueError(f"unknown extension mode {mode!r}")

    def ext(t, x):
        x = np.asarray(x, dtype=np.float64)
        xs = np.clip(x, a, b) if mode == "projected" else x
        dist = np.maximum(x[..., 0] - b, 0.0) + np.maximum(a - x[..., 0], 0.0)
        chi = smooth_cutoff(dist, width)
        return np.asarray(g(t, xs), dtype=np.float64) * chi[..., None]

    return ext


def solve_lift_spacetime(
    g: Callable[[NDArray, NDArray], NDArray],
    dom: DomainSpec,
    nodes: int,
    t_slices: ArrayLike,
    separable: SeparableField | None = None,
    zero: bool = False,
    extension: str = "natural",
    margin: float = 0.5,
) -> LiftField:
    """Lift on every time slice; ``g(t, x)`` with x of shape (..., 1).

    With a separable field the spatial problem is solved once and the time
    derivative is analytic; otherwise dG/dt comes from differences across
    slices (second order, one-sided at the ends).
    """
    O = enclosing_interval(dom, margin)
    ts = np.asarray(t_slices, dtype=np.float64)
    x = np.linspace(O[0], O[1], nodes)
    if zero:
        z = np.zeros((ts.size, nodes))
        return LiftField(x, ts, z, z.copy(), z.copy(), "zero", np.zeros(ts.size), 1.0)

    if separable is not None:
        space = smooth_extension(lambda t, y: separable.space_factor(y), dom, O, extension)
        sl = solve_lift_slice(lambda y: space(0.0, y), O, nodes)
        g1 = np.asarray(separable.time_factor(ts), dtype=np.float64) * np.ones_like(ts)
        dg1 = np.asarray(separable.time_derivative(ts), dtype=np.float64) * np.ones_like(ts)
        return LiftField(
            x, ts, np.outer(g1, sl.values), np.outer(g1, sl.gradient), np.outer(dg1, sl.values),
            "analytic(separable)", np.abs(g1) * sl.residual, sl.cond, extension,
        )

    ext = smooth_extension(g, dom, O, extension)
    vals = np.empty((ts.size, nodes))
    grads = np.empty_like(vals)
    res = np.empty(ts.size)
    cond = _condition(_assemble(nodes, x[1] - x[0]))
    for i, t in enumerate(ts):
        try:
            sl = solve_lift_slice(lambda y, t=t: ext(t, y), O, nodes, cond=cond)
        except Exception as exc:
            raise LiftError(f"lift slice {i} (t={t:g}) failed: {exc}") from exc
        vals[i], grads[i], res[i] = sl.values, sl.gradient, sl.residual
    if ts.size >= 3:
        dt = np.gradient(vals, ts, axis=0, edge_order=2)
    elif ts.size == 2:
        dt = np.gradient(vals, ts, axis=0)
    else:
        dt = np.zeros_like(vals)
    return LiftField(x, ts, vals, grads, dt, "numeric", res, cond, extension)


def eval_lift(L: LiftField, t: ArrayLike, x: ArrayLike) -> tuple[NDArray, NDArray, NDArray]:
    """Bilinear interpolation of (G, dG/dx, dG/dt) at (t, x); x is scalar-per-point in 1-D."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim and x.shape[-1] == 1:
        x = x[..., 0]
    xg, tg = L.o_grid, L.t_slices
    tol = 1e-12 * max(1.0, abs(tg[-1]))
    if np.any(x < xg[0] - 1e-12) or np.any(x > xg[-1] + 1e-12):
        raise LiftError("lift query outside the enclosing interval")
    if np.any(t < tg[0] - tol) or np.any(t > tg[-1] + tol):
        raise LiftError("lift query outside the time range")
    t, x = np.broadcast_arrays(t, x)
    i, wt = _bracket(tg, t)
    j, wx = _bracket(xg, x)

    def bil(a):
        if tg.size == 1:
            return (1 - wx) * a[0, j] + wx * a[0, j + 1]
        return (1 - wt) * ((1 - wx) * a[i, j] + wx * a[i, j + 1]) + wt * ((1 - wx) * a[i + 1, j] + wx * a[i + 1, j + 1])

    return bil(L.values), bil(L.gradient), bil(L.time_derivative)


def _bracket(grid: NDArray, v: NDArray) -> tuple[NDArray, NDArray]:
    if grid.size == 1:
        return np.zeros(v.shape, dtype=np.int64), np.zeros(v.shape)
    i = np.clip(np.searchsorted(grid, v, side="right") - 1, 0, grid.size - 2)
    w = np.clip((v - grid[i]) / (grid[i + 1] - grid[i]), 0.0, 1.0)
    return i, w


def weak_residuals(L: LiftField, g: Callable[[NDArray, NDArray], NDArray], dom: DomainSpec, extension: str = "natural") -> NDArray:
    """Max |int G'phi' + G phi - g phi'| over interior hats, per slice."""
    O = (float(L.o_grid[0]), float(L.o_grid[-1]))
    ext = smooth_extension(g, dom, O, extension)
    h = L.o_grid[1] - L.o_grid[0]
    ab = _assemble(L.o_grid.size, h)
    out = np.empty(L.t_slices.size)
    for i, t in enumerate(L.t_slices):
        rhs = _load(lambda y: ext(t, y), L.o_grid)
        out[i] = np.max(np.abs(_matvec(ab, L.values[i, 1:-1]) - rhs))
    return out
