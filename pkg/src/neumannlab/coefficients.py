"""PDE data (terminal value, reaction, divergence field, boundary reaction) and
the structural constants that govern well-posedness and Picard contraction.

Coefficient callables are vectorised. With ``x`` of shape ``(..., N)``,
``y`` of shape ``(...)`` and ``z`` of shape ``(..., N)``:

* ``terminal(x) -> (...)``
* ``reaction(t, x, y, z) -> (...)``
* ``divergence_field(t, x, y, z) -> (..., N)``
* ``boundary_reaction(t, x, y) -> (...)``

In linear mode ``y`` and ``z`` are accepted and ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .geometry import INTERVAL, DomainSpec, make_interval

logger = logging.getLogger(__name__)

Terminal = Callable[[NDArray], NDArray]
Reaction = Callable[[NDArray, NDArray, NDArray, NDArray], NDArray]
Boundary = Callable[[NDArray, NDArray, NDArray], NDArray]


def _zero_scalar(t, x, y, z=None):
    return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]))


def _zero_vector(t, x, y, z):
    shape = np.broadcast_shapes(np.shape(t), np.shape(x)[:-1])
    return np.zeros(shape + (np.shape(x)[-1],))


@dataclass(frozen=True)
class SeparableField:
    """g(t, x) = time_factor(t) * space_factor(x), with the time derivative."""

    time_factor: Callable[[NDArray], NDArray]
    time_derivative: Callable[[NDArray], NDArray]
    space_factor: Callable[[NDArray], NDArray]


@dataclass(frozen=True)
class CoefficientSet:
    name: str
    terminal: Terminal
    reaction: Reaction = _zero_scalar
    divergence_field: Reaction = _zero_vector
    boundary_reaction: Boundary = _zero_scalar
    drift: Callable[[NDArray], NDArray] | None = None
    horizon: float = 1.0
    linear: bool = True
    # set when g does not depend on (t, x, y, z) at all; lets solvers skip the lift
    zero_divergence: bool = False
    separable: SeparableField | None = None
    # optional closed-form solution, used only by tests and reports
    exact: Callable[[NDArray, NDArray], NDArray] | None = None

    def f(self, t, x, y=0.0, z=0.0):
        return _broadcast_out(self.reaction(t, x, y, z), t, x)

    def g(self, t, x, y=0.0, z=0.0):
        x = np.asarray(x, dtype=np.float64)
        out = np.asarray(self.divergence_field(t, x, y, z), dtype=np.float64)
        shape = np.broadcast_shapes(np.shape(t), x.shape[:-1]) + (x.shape[-1],)
        return np.broadcast_to(out, shape)

    def h(self, t, x, y=0.0):
        return _broadcast_out(self.boundary_reaction(t, x, y), t, x)

    def phi(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(np.asarray(self.terminal(x), dtype=np.float64), x.shape[:-1])

    def frozen(self, name: str, f=None, g=None, h=None, zero_divergence: bool = False) -> CoefficientSet:
        """Linear coefficient set with (y, z) already substituted."""
        return replace(
            self,
            name=name,
            reaction=f if f is not None else _zero_scalar,
            divergence_field=g if g is not None else _zero_vector,
            boundary_reaction=h if h is not None else _zero_scalar,
            linear=True,
            zero_divergence=zero_divergence,
            separable=None,
            exact=None,
        )


def _broadcast_out(v, t, x):
    shape = np.broadcast_shapes(np.shape(t), np.shape(x)[:-1])
    return np.broadcast_to(np.asarray(v, dtype=np.float64), shape)


@dataclass(frozen=True)
class AssumptionSet:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    K_bound: float = 1.0
    C_space: float = 1.0
    C0_drift: float = 0.0
    trace_norm: float = 1.0

    def trace_condition(self) -> bool:
        return self.beta * self.trace_norm**2 < 1.0

    def gamma_condition(self) -> bool:
        return 2.0 * np.sqrt(2.0) * self.gamma < 1.0


@dataclass
class AssumptionReport:
    """Worst observed constants from sampling; advisory only."""

    observed: dict[str, float]
    declared: dict[str, float]
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_assumptions(
    coef: CoefficientSet,
    asm: AssumptionSet,
    probes: int,
    rng_seed: int,
    dom: DomainSpec | None = None,
    y_box: float = 5.0,
    z_box: float = 5.0,
) -> AssumptionReport:
    """Sample tuples (t, x, x', y, y', z, z') and estimate the (H1)-(H6) constants.

    Pairs are drawn at mixed separations (macroscopic and 1e-4 scale) so that
    Lipschitz quotients approach local derivative bounds.
    """
    if probes <= 0:
        raise ValueError("probes must be positive")
    dom = dom if dom is not None else make_interval(-1.0, 1.0)
    rng = np.random.default_rng(rng_seed)
    N = dom.dimension
    T = coef.horizon

    t = rng.uniform(0.0, T, probes)
    x = _sample_closure(dom, probes, rng)
    y = rng.uniform(-y_box, y_box, probes)
    z = rng.uniform(-z_box, z_box, (probes, N))
    scale = np.where(rng.random(probes) < 0.5, 1.0, 1e-4)
    y2 = np.clip(y + scale * rng.normal(size=probes), -y_box, y_box)
    z2 = np.clip(z + scale[:, None] * rng.normal(size=(probes, N)), -z_box, z_box)
    x2 = dom.projection(x + scale[:, None] * rng.normal(size=(probes, N)))
    xb = _sample_boundary(dom, probes, rng)
    xb2 = _sample_boundary(dom, probes, rng, near=xb, scale=scale)

    dy = y - y2
    dyz = np.abs(dy) + np.linalg.norm(z - z2, axis=-1)
    dx = np.linalg.norm(x - x2, axis=-1)
    dxb = np.linalg.norm(xb - xb2, axis=-1)
    # separations below 1e-7 give difference quotients dominated by rounding
    ok_y = np.abs(dy) > 1e-7
    ok_yz = dyz > 1e-7
    ok_x = dx > 1e-7
    ok_xb = dxb > 1e-7

    f_yz = coef.f(t, x, y, z)
    f_y2 = coef.f(t, x, y2, z)
    f_y2z2 = coef.f(t, x, y2, z2)
    f_x2 = coef.f(t, x2, y, z)
    h_y = coef.h(t, xb, y)
    h_y2 = coef.h(t, xb, y2)
    h_x2 = coef.h(t, xb2, y)
    g_yz = coef.g(t, x, y, z)
    g_y2z2 = coef.g(t, x, y2, z2)

    def qmax(num, den, mask):
        return float(np.max(num[mask] / den[mask])) if np.any(mask) else 0.0

    obs = {
        "H1_f_monotone": qmax(dy * (f_yz - f_y2), dy**2, ok_y),
        "H1_h_monotone": qmax(dy * (h_y - h_y2), dy**2, ok_y),
        "H2_f_growth": float(np.max(np.abs(f_yz) / (1.0 + np.abs(y) + np.linalg.norm(z, axis=-1)))),
        "H2_h_bound": float(np.max(np.abs(h_y))),
        "H4_f_lipschitz_yz": qmax(np.abs(f_yz - f_y2z2), dyz, ok_yz),
        "H4_f_lipschitz_x": qmax(np.abs(f_yz - f_x2), dx, ok_x),
        "H5_h_lipschitz_y": qmax(np.abs(h_y - h_y2), np.abs(dy), ok_y),
        "H5_h_lipschitz_x": qmax(np.abs(h_y - h_x2), dxb, ok_xb),
        "H6_g_lipschitz_yz": qmax(np.max(np.abs(g_yz - g_y2z2), axis=-1), dyz, ok_yz),
    }
    declared = {
        "H1_f_monotone": asm.alpha,
        "H1_h_monotone": -asm.beta,
        "H2_f_growth": asm.K_bound,
        "H2_h_bound": asm.K_bound,
        "H4_f_lipschitz_yz": asm.alpha,
        "H4_f_lipschitz_x": asm.C_space,
        "H5_h_lipschitz_y": asm.beta,
        "H5_h_lipschitz_x": asm.C_space,
        "H6_g_lipschitz_yz": asm.gamma,
    }
    violations = [k for k in obs if obs[k] > declared[k] + 1e-7 * (1.0 + abs(declared[k]))]
    for k in violations:
        logger.info("assumption %s: observed %.4g exceeds declared %.4g", k, obs[k], declared[k])
    return AssumptionReport(obs, declared, violations)


def _sample_closure(dom: DomainSpec, n: int, rng: np.random.Generator) -> NDArray:
    lo, hi = dom.bounding_box()
    out = np.empty((0, dom.dimension))
    while out.shape[0] < n:
        cand = rng.uniform(lo, hi, size=(2 * n, dom.dimension))
        out = np.concatenate([out, cand[dom.contains(cand)]])
    return out[:n]


def _sample_boundary(dom, n, rng, near=None, scale=None):
    if near is None:
        if dom.kind == INTERVAL:
            return rng.choice(dom.params, size=(n, 1))
        v = rng.normal(size=(n, dom.dimension))
    else:
        if dom.kind == INTERVAL:
            return near.copy()
        c = dom.params[1:]
        v = (near - c) + scale[:, None] * rng.normal(size=near.shape)
    c, r = dom.params[1:], dom.params[0]
    return c + r * v / np.linalg.norm(v, axis=-1, keepdims=True)


class UnsupportedDomainError(ValueError):
    pass


def estimate_trace_norm(dom: DomainSpec, nodes: int) -> float:
    """Largest ||v||_{L2(boundary)} / ||v||_{H1(D)} over P1 functions on a uniform grid.

    ``nodes == 1`` restricts the family to constants. Refining a grid by
    doubling nests the function spaces, so the estimate is nondecreasing.
    """
    if dom.kind != INTERVAL:
        raise UnsupportedDomainError("trace-norm estimate is available for intervals only")
    a, b = dom.params
    if nodes == 1:
        return float(np.sqrt(2.0 / (b - a)))
    if nodes < 2:
        raise ValueError("nodes must be >= 1")
    from scipy.linalg import solve_banded

    h = (b - a) / (nodes - 1)
    ab = np.empty((3, nodes))
    ab[1] = 2.0 / h + 4.0 * h / 6.0
    ab[1, [0, -1]] = 1.0 / h + 2.0 * h / 6.0
    ab[0, 1:] = ab[2, :-1] = -1.0 / h + h / 6.0
    # the boundary operator has rank 2: the top generalized eigenvalue is the
    # top eigenvalue of the boundary block of A^{-1}
    rhs = np.zeros((nodes, 2))
    rhs[0, 0] = rhs[-1, 1] = 1.0
    sol = solve_banded((1, 1), ab, rhs)
    block = sol[[0, -1], :]
    lam = np.linalg.eigvalsh(0.5 * (block + block.T))[-1]
    return float(np.sqrt(lam))
