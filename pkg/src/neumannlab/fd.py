"""Deterministic 1-D reference solver for the linear Neumann problem and its Picard extension.

Space: linear elements with lumped mass on a uniform grid (the lumped
system coincides with the ghost-node scheme). The divergence field enters
only through the load ``int g phi'``; the flux condition
``<u', n> - 2<g, n> + h = 0`` is natural in this weak form and contributes
``h / 2`` at the end nodes.

Time: theta-scheme marching backward from the terminal value,

    (M + th dt S/2) u^n = (M - (1-th) dt S/2) u^{n+1} + dt (th q^n + (1-th) q^{n+1}),

with ``q = int g phi' + int f phi + h/2`` on the boundary nodes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_banded

from .coefficients import AssumptionSet, CoefficientSet
from .geometry import INTERVAL, DomainSpec
from .grid import GridFunction
from .picard import PicardState, analytic_constants

logger = logging.getLogger(__name__)

_GL_X = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class FDStabilityError(ValueError):
    pass


@dataclass(frozen=True)
class FDConfig:
    nodes: int = 201
    time_nodes: int = 401
    theta: float = 0.5

    def validate(self, dom: DomainSpec, T: float) -> None:
        if self.nodes < 3 or self.time_nodes < 2:
            raise ValueError("FD grid needs >= 3 space nodes and >= 2 time nodes")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        a, b = dom.params
        dx = (b - a) / (self.nodes - 1)
        dt = T / (self.time_nodes - 1)
        if self.theta < 0.5 and dt > dx * dx:
            raise FDStabilityError(f"theta={self.theta} < 0.5 requires dt <= dx^2 ({dt:.3g} > {dx * dx:.3g})")


@dataclass(frozen=True)
class LinearData:
    """Linear data as plain callables of (t, x) with x of shape (...,)."""

    terminal: Callable[[NDArray], NDArray]
    f: Callable[[float, NDArray], NDArray]
    g: Callable[[float, NDArray], NDArray]
    h: Callable[[float, NDArray], NDArray]
    zero_g: bool = False


def linear_data(coef: CoefficientSet) -> LinearData:
    if not coef.linear:
        raise ValueError(f"{coef.name}: linear solver needs linear coefficients")
    return LinearData(
        terminal=lambda x: coef.phi(x[..., None]),
        f=lambda t, x: coef.f(t, x[..., None]),
        g=lambda t, x: coef.g(t, x[..., None])[..., 0],
        h=lambda t, x: coef.h(t, x[..., None]),
        zero_g=coef.zero_divergence,
    )


def _require_interval(dom: DomainSpec) -> tuple[float, float]:
    if dom.kind != INTERVAL:
        raise ValueError("the FD reference solver works on intervals only")
    a, b = dom.params
    return float(a), float(b)


def _quad_points(x: NDArray) -> NDArray:
    h = x[1] - x[0]
    return x[:-1, None] + h * _GL_X[None, :]


def _load(data: LinearData, t: float, x: NDArray, lumped: NDArray, qx: NDArray) -> NDArray:
    h = x[1] - x[0]
    q = np.asarray(data.f(t, x), dtype=np.float64) * lumped
    if not data.zero_g:
        elem = h * (np.asarray(data.g(t, qx), dtype=np.float64) @ _GL_W)
        q[:-1] -= elem / h
        q[1:] += elem / h
    hv = np.asarray(data.h(t, x[[0, -1]]), dtype=np.float64)
    q[0] += 0.5 * hv[0]
    q[-1] += 0.5 * hv[1]
    return q


def _stiffness_band(n: int, h: float) -> NDArray:
    """Tridiagonal P1 stiffness in solve_banded layout (u, l = 1, 1)."""
    S = np.zeros((3, n))
    S[1] = 2.0 / h
    S[1, [0, -1]] = 1.0 / h
    S[0, 1:] = -1.0 / h
    S[2, :-1] = -1.0 / h
    return S


def _stiffness_apply(v: NDArray, h: float) -> NDArray:
    """S v through flux differences, so constants map to exact zeros."""
    flux = np.diff(v) / h
    out = np.zeros_like(v)
    out[:-1] -= flux
    out[1:] += flux
    return out


def march(dom: DomainSpec, data: LinearData, T: float, cfg: FDConfig) -> tuple[NDArray, NDArray, NDArray]:
    a, b = _require_interval(dom)
    cfg.validate(dom, T)
    x = np.linspace(a, b, cfg.nodes)
    t = np.linspace(0.0, T, cfg.time_nodes)
    h = x[1] - x[0]
    dt = t[1] - t[0]
    lumped = np.full(cfg.nodes, h)
    lumped[[0, -1]] = 0.5 * h
    S = _stiffness_band(cfg.nodes, h)
    th = cfg.theta
    lhs = 0.5 * th * dt * S
    lhs[1] += lumped
    qx = _quad_points(x)

    u = np.empty((t.size, x.size))
    u[-1] = data.terminal(x)
    q_next = _load(data, t[-1], x, lumped, qx)
    for n in range(t.size - 2, -1, -1):
        q_now = _load(data, t[n], x, lumped, qx)
        # increment form: lhs (u_n - u_{n+1}) = -dt/2 S u_{n+1} + dt q
        rhs = -0.5 * dt * _stiffness_apply(u[n + 1], h) + dt * (th * q_now + (1.0 - th) * q_next)
        u[n] = u[n + 1] + solve_banded((1, 1), lhs, rhs)
        q_next = q_now
    return t, x, u


def solve_linear_fd(dom: DomainSpec, coef: CoefficientSet, cfg: FDConfig) -> GridFunction:
    t, x, u = march(dom, linear_data(coef), coef.horizon, cfg)
    # the terminal slice is the terminal value, bit for bit
    u[-1] = coef.phi(x[:, None])
    return GridFunction(t, x, u, None, {"solver": "fd", "theta": cfg.theta, "nodes": cfg.nodes, "time_nodes": cfg.time_nodes})


# ---------------------------------------------------------------------------
# Picard (analytic route)


def _interp_rows(x: NDArray, rows: NDArray, q: NDArray) -> NDArray:
    return np.interp(q.ravel(), x, rows).reshape(q.shape)


def frozen_data(coef: CoefficientSet, grid: GridFunction) -> LinearData:
    """Coefficients with (y, z) replaced by the grid's (u, u_x) at the same time."""
    tg, xg = grid.t_nodes, grid.x_nodes
    U, Z = grid.values, grid.gradient

    def slice_at(t):
        i = int(np.argmin(np.abs(tg - t)))
        if abs(tg[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise ValueError("frozen coefficients are only available on the grid times")
        return U[i], Z[i]

    def f(t, x):
        u, z = slice_at(t)
        return coef.f(t, x[..., None], _interp_rows(xg, u, x), _interp_rows(xg, z, x)[..., None])

    def g(t, x):
        u, z = slice_at(t)
        return coef.g(t, x[..., None], _interp_rows(xg, u, x), _interp_rows(xg, z, x)[..., None])[..., 0]

    def h(t, x):
        u, _ = slice_at(t)
        return coef.h(t, x[..., None], _interp_rows(xg, u, x))

    return LinearData(lambda x: coef.phi(x[..., None]), f, g, h, coef.zero_divergence)


def theta_norm_sq(v: GridFunction | NDArray, x: NDArray, t: NDArray, theta: float) -> float:
    """int_0^T e^{theta s} (|v_s|^2 + |v_s'|^2) ds with lumped mass and trapezoid in time."""
    vals = v.values if isinstance(v, GridFunction) else v
    h = x[1] - x[0]
    w = np.full(x.size, h)
    w[[0, -1]] = 0.5 * h
    l2 = vals**2 @ w
    d = np.diff(vals, axis=1)
    h1 = np.sum(d * d, axis=1) / h
    return float(_trapezoid(np.exp(theta * t) * (l2 + h1), t))


def picard_solve_fd(
    dom: DomainSpec,
    coef: CoefficientSet,
    cfg: FDConfig,
    tol: float,
    max_iter: int,
    asm: AssumptionSet | None = None,
    theta: float | None = None,
) -> tuple[GridFunction, PicardState]:
    """u^0 = 0; u^{k+1} solves the linear problem frozen at (u^k, u^k_x).

    Distances are squared theta-norms of u^{k+1} - u^k, theta taken from the
    analytic contraction witness when ``asm`` is given.
    """
    if theta is None:
        theta = 1.0
        if asm is not None:
            w = analytic_constants(asm)
            if w.feasible:
                theta = w.theta
            else:
                logger.warning("analytic contraction route infeasible (%s)", w.binding)
    a, b = _require_interval(dom)
    x = np.linspace(a, b, cfg.nodes)
    t = np.linspace(0.0, coef.horizon, cfg.time_nodes)
    u = GridFunction(t, x, np.zeros((t.size, x.size)), None, {"solver": "fd-picard"})
    state = PicardState(norm=f"theta={theta:.6g}", current=u)
    streak = 0
    for k in range(max_iter):
        data = linear_data(coef) if coef.linear else frozen_data(coef, u)
        _, _, nxt = march(dom, data, coef.horizon, cfg)
        nxt[-1] = coef.phi(x[:, None])
        new = GridFunction(t, x, nxt, None, {"solver": "fd-picard", "iteration": k + 1, "theta_norm": theta})
        d = theta_norm_sq(nxt - u.values, x, t, theta)
        state.record(d)
        state.k = k + 1
        state.current = new
        r = state.ratios[-1]
        streak = streak + 1 if (r is not None and r >= 1.0) else 0
        logger.info("fd picard k=%d d=%.3e ratio=%s", k + 1, d, r)
        if streak >= 2:
            state.alarm = True
            logger.warning("fd picard: ratio >= 1 on two consecutive iterations")
        u = new
        if math.sqrt(d) <= tol:
            state.converged = True
            break
    return u, state


# ---------------------------------------------------------------------------
# weak residual


def default_test_bank(T: float, a: float, b: float) -> list[tuple[str, Callable, Callable, Callable]]:
    """Twelve tensor products p(t) q(x); entries are (name, phi, dphi/dt, dphi/dx)."""
    s = lambda x: (2.0 * x - (a + b)) / (b - a)  # noqa: E731
    k = 2.0 / (b - a)
    time = [
        ("1", lambda t: np.ones_like(t), lambda t: np.zeros_like(t)),
        ("t", lambda t: t / T, lambda t: np.full_like(t, 1.0 / T)),
        ("cos", lambda t: np.cos(0.5 * np.pi * t / T), lambda t: -0.5 * np.pi / T * np.sin(0.5 * np.pi * t / T)),
    ]
    space = [
        ("1", lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
        ("x", lambda x: s(x), lambda x: np.full_like(x, k)),
        ("x2", lambda x: s(x) ** 2, lambda x: 2.0 * k * s(x)),
        ("cospix", lambda x: np.cos(np.pi * s(x)), lambda x: -np.pi * k * np.sin(np.pi * s(x))),
    ]
    bank = []
    for tn, p, dp in time:
        for xn, q, dq in space:
            bank.append((
                f"{tn}*{xn}",
                lambda t, x, p=p, q=q: p(t) * q(x),
                lambda t, x, dp=dp, q=q: dp(t) * q(x),
                lambda t, x, p=p, dq=dq: p(t) * dq(x),
            ))
    return bank


def weak_residual(
    u: GridFunction,
    coef: CoefficientSet,
    test_bank: list | None = None,
    theta: float | None = None,
) -> float:
    """Max over the bank of |R(phi)|, the discrete weak identity integrated over [0, T].

    Each smooth test function is replaced by its nodal interpolant on the
    grid of ``u``, so that R is the weak form restricted to the linear
    element space:

        R(phi) = sum_n (u^{n+1} - u^n, phi)_h
                 - dt sum_n [ (1/2)(u', phi') - (g, phi') - (f, phi)_h - (1/2) sum_ends h phi ]_theta

    where ``(., .)_h`` is nodal quadrature, ``(g, phi')`` uses 3-point Gauss
    per cell, and ``[.]_theta`` weights the two time levels (default: the
    value recorded by the solver, else 1/2).
    """
    return float(np.max(np.abs(weak_residual_terms(u, coef, test_bank, theta))))


def weak_residual_terms(u: GridFunction, coef: CoefficientSet, test_bank=None, theta=None) -> NDArray:
    x, t, U = u.x_nodes, u.t_nodes, u.values
    th = float(u.meta.get("theta", 0.5)) if theta is None else float(theta)
    a, b = float(x[0]), float(x[-1])
    if test_bank is None:
        test_bank = default_test_bank(float(t[-1]), a, b)
    h = np.diff(x)
    w = np.zeros(x.size)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    qx = x[:-1, None] + h[:, None] * _GL_X[None, :]
    Z = u.gradient

    def level(n):
        """Spatial functional at time level n, as (nodal weights, cell-slope weights)."""
        tn = t[n]
        un, zn = U[n], Z[n]
        f = np.asarray(coef.f(tn, x[:, None], un, zn[:, None]), dtype=np.float64)
        if coef.zero_divergence:
            gcell = np.zeros(h.size)
        else:
            uq = _interp_rows(x, un, qx)
            zq = _interp_rows(x, zn, qx)
            g = np.asarray(coef.g(tn, qx[..., None], uq, zq[..., None]), dtype=np.float64)[..., 0]
            gcell = h * (g @ _GL_W)
        hv = np.asarray(coef.h(tn, np.array([[a], [b]]), un[[0, -1]]), dtype=np.float64)
        slope = np.diff(un) / h
        return f * w, 0.5 * slope * h - gcell, hv

    out = np.zeros(len(test_bank))
    prev = level(t.size - 1)
    for n in range(t.size - 2, -1, -1):
        cur = level(n)
        dt = t[n + 1] - t[n]
        tm = 0.5 * (t[n] + t[n + 1])
        du = U[n + 1] - U[n]
        for i, (_, phi, _, _) in enumerate(test_bank):
            ph = phi(tm, x)
            dph = np.diff(ph) / h
            acc = 0.0
            for wgt, (fw, cellw, hv) in ((th, cur), (1.0 - th, prev)):
                if wgt == 0.0:
                    continue
                val = np.sum(cellw * dph) - np.sum(fw * ph) - 0.5 * (hv[0] * ph[0] + hv[1] * ph[-1])
                acc += wgt * val
            out[i] += np.sum(w * du * ph) - dt * acc
        prev = cur
    return out
