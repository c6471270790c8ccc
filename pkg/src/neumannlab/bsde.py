"""Monte Carlo solvers: reflected-path Feynman-Kac with the lift, the penalized
sequence, and the Picard driver for nonlinear coefficients.

With the lift G of the divergence field, the solution is u = u_tilde + 2G where

    u_tilde(t, x) = E[ Phi(X_T) - 2G(T, X_T) + int_t^T f_tilde(r, X_r) dr + int_t^T h_tilde(r, X_r) dL_r ],
    f_tilde = f + 2 dG/dt + G,
    h_tilde = h + 2 <grad G - g, n>.

The flux term in h_tilde vanishes only when grad G = g on the boundary;
keeping it makes the estimate independent of how g is extended outside
the domain. All data are tabulated on the lift's (t, x) grid and read by
bilinear interpolation inside the kernels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from . import kernels
from .coefficients import AssumptionSet, CoefficientSet
from .geometry import INTERVAL, DomainSpec
from .grid import GridFunction, bilinear
from .lift import LiftField, _assemble, _load, _matvec, enclosing_interval, smooth_extension, solve_lift_spacetime
from .picard import PicardState, probabilistic_constants
from .rng import PathStreams, map_batches, mean_se

logger = logging.getLogger(__name__)


class LiftMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MCConfig:
    paths: int = 20000
    dt: float = 1e-3
    workers: int = 1
    batch: int = 1024
    deterministic: bool = True
    se_cap: float | None = None
    lift_nodes: int = 801
    table_times: int = 201
    # "reflection": mirror fold with conditional-mean local time (weak order 1);
    # "projection": clip with overshoot local time, the path engine's scheme
    scheme: str = "reflection"

    def scheme_code(self) -> int:
        try:
            return {"projection": kernels.PROJECTION, "reflection": kernels.REFLECTION}[self.scheme]
        except KeyError:
            raise ValueError(f"unknown reflected scheme {self.scheme!r}") from None


@dataclass(frozen=True)
class Data1D:
    """Linear data as callables of (t, x) with x of shape (...,), plus the lift."""

    terminal: Callable[[NDArray], NDArray]
    f: Callable
    g: Callable | None
    h: Callable
    lift: LiftField | None


def _interval(dom: DomainSpec) -> tuple[float, float]:
    if dom.kind != INTERVAL:
        raise ValueError("Monte Carlo solvers are implemented for intervals")
    a, b = dom.params
    return float(a), float(b)


def linear_data_1d(coef: CoefficientSet, lift: LiftField | None) -> Data1D:
    if not coef.linear:
        raise ValueError(f"{coef.name}: linear solver needs linear coefficients")
    if coef.drift is not None:
        raise NotImplementedError("nonzero drift is folded into f by the Picard driver")
    g = None if coef.zero_divergence else (lambda t, x: coef.g(t, x[..., None])[..., 0])
    return Data1D(
        lambda x: coef.phi(x[..., None]),
        lambda t, x: coef.f(t, x[..., None]),
        g,
        lambda t, x: coef.h(t, x[..., None]),
        lift,
    )


def default_lift(dom: DomainSpec, coef: CoefficientSet, cfg: MCConfig) -> LiftField | None:
    if coef.zero_divergence:
        return None
    ts = np.linspace(0.0, coef.horizon, cfg.table_times)
    return solve_lift_spacetime(
        lambda t, x: coef.g(t, x), dom, cfg.lift_nodes, ts, separable=coef.separable
    )


def check_lift(lift: LiftField, g: Callable, dom: DomainSpec, rtol: float = 1e-6) -> None:
    """Raise if ``lift`` does not solve the lift problem for ``g`` on its end slices."""
    x = lift.o_grid
    ab = _assemble(x.size, x[1] - x[0])
    ext = smooth_extension(lambda t, y: g(t, y[..., 0])[..., None], dom, (x[0], x[-1]), lift.extension)
    for i in sorted({0, lift.t_slices.size - 1}):
        t = lift.t_slices[i]
        rhs = _load(lambda y: ext(t, y), x)
        res = np.max(np.abs(_matvec(ab, lift.values[i, 1:-1]) - rhs))
        scale = max(np.max(np.abs(rhs)), 1.0)
        if res > rtol * scale + 1e-9:
            raise LiftMismatchError(f"lift does not match the divergence field at t={t:g} (residual {res:.3e})")


@dataclass(frozen=True)
class Tables:
    grid: NDArray  # (t_lo, t_step, x_lo, x_step)
    t: NDArray
    x: NDArray
    ftab: NDArray
    htab: NDArray
    term: NDArray
    G: NDArray  # lift values on the table grid (zeros without a lift)


def build_tables(dom: DomainSpec, data: Data1D, T: float, times: int = 201, nodes: int = 801, extended: bool = False) -> Tables:
    a, b = _interval(dom)
    L = data.lift
    if L is not None:
        t, x = L.t_slices, L.o_grid
        if not np.allclose(np.diff(t), t[1] - t[0]) or not np.allclose(np.diff(x), x[1] - x[0]):
            raise ValueError("lift grids must be uniform")
        if abs(t[0]) > 1e-12 or abs(t[-1] - T) > 1e-9:
            raise LiftMismatchError("lift time slices must span [0, T]")
        G, dG, dtG = L.values, L.gradient, L.time_derivative
    else:
        lo, hi = enclosing_interval(dom) if extended else (a, b)
        t = np.linspace(0.0, T, times)
        x = np.linspace(lo, hi, nodes)
        G = dG = dtG = np.zeros((t.size, x.size))
    px = np.clip(x, a, b)
    TT = t[:, None]
    ftab = np.asarray(data.f(TT, px[None, :]), dtype=np.float64) + 2.0 * dtG + G
    ftab = np.ascontiguousarray(np.broadcast_to(ftab, (t.size, x.size)))
    ends = np.array([a, b])
    htab = np.asarray(data.h(TT, ends[None, :]), dtype=np.float64) * np.ones((t.size, 2))
    if L is not None and data.g is not None:
        dG_end = np.stack([np.interp(ends, x, row) for row in dG])
        g_end = np.asarray(data.g(TT, ends[None, :]), dtype=np.float64) * np.ones((t.size, 2))
        normal = np.array([1.0, -1.0])
        htab = htab + 2.0 * (dG_end - g_end) * normal
    term = np.asarray(data.terminal(px), dtype=np.float64) - 2.0 * G[-1]
    grid = np.array([t[0], t[1] - t[0], x[0], x[1] - x[0]])
    return Tables(grid, t, x, ftab, np.ascontiguousarray(htab), np.ascontiguousarray(term), G)


def _lift_at(tab: Tables, t: float, xs: NDArray) -> NDArray:
    return bilinear(tab.t, tab.x, tab.G, np.full(xs.shape, t), xs)


def _steps(t: float, T: float, dt: float) -> tuple[int, float]:
    M = max(1, int(round((T - t) / dt)))
    return M, (T - t) / M


def _mc_grid(
    dom: DomainSpec,
    tab: Tables,
    T: float,
    terminal: Callable,
    t_nodes: NDArray,
    x_nodes: NDArray,
    cfg: MCConfig,
    streams: PathStreams,
    run_kernel: Callable,
    meta: dict,
) -> GridFunction:
    t_nodes = np.asarray(t_nodes, dtype=np.float64)
    x_nodes = np.ascontiguousarray(x_nodes, dtype=np.float64)
    a, b = _interval(dom)
    if np.any(x_nodes < a) or np.any(x_nodes > b):
        raise ValueError("evaluation points must lie in the closed domain")
    U = np.empty((t_nodes.size, x_nodes.size))
    SE = np.zeros_like(U)
    for i, t in enumerate(t_nodes):
        if T - t <= 1e-12 * max(1.0, T):
            U[i] = terminal(x_nodes)
            continue
        M, h = _steps(t, T, cfg.dt)
        st = streams.child("t", i)

        def run(first, count, st=st, M=M, h=h, t=t):
            dB = st.increments(first, count, M, 1, h)[..., 0]
            return run_kernel(x_nodes, dB, t, h)

        vals = map_batches(run, cfg.paths, cfg.workers, cfg.batch)
        m, s = _mean_se_exact(vals, cfg.deterministic)
        U[i] = m + 2.0 * _lift_at(tab, t, x_nodes)
        SE[i] = s
    low = []
    if cfg.se_cap is not None:
        low = [(float(t_nodes[i]), float(x_nodes[j])) for i, j in zip(*np.nonzero(SE > cfg.se_cap))]
        if low:
            logger.warning("%d nodes exceed the SE cap %.3g (low confidence)", len(low), cfg.se_cap)
    meta = {**meta, "paths": cfg.paths, "dt": cfg.dt, "low_confidence": low}
    return GridFunction(t_nodes, x_nodes, U, SE, meta)


def _mean_se_exact(vals: NDArray, deterministic: bool) -> tuple[NDArray, NDArray]:
    """Mean and SE over paths; columns where every path agrees are returned exactly."""
    m, s = mean_se(vals, deterministic=deterministic)
    const = np.all(vals == vals[:1], axis=0)
    m = np.where(const, vals[0], m)
    s = np.where(const, 0.0, s)
    return m, s


def solve_linear_mc(
    dom: DomainSpec,
    coef: CoefficientSet,
    lift: LiftField | None,
    t_nodes,
    x_nodes,
    cfg: MCConfig,
    streams: PathStreams,
    data: Data1D | None = None,
) -> GridFunction:
    """Reflected-path estimate of u on the tensor grid t_nodes x x_nodes."""
    a, b = _interval(dom)
    if data is None:
        if not coef.zero_divergence and lift is None:
            raise LiftMismatchError("a lift is required for a nonzero divergence field")
        data = linear_data_1d(coef, lift)
        if lift is not None and data.g is not None:
            check_lift(lift, data.g, dom)
    tab = build_tables(dom, data, coef.horizon, cfg.table_times, cfg.lift_nodes)
    scheme = cfg.scheme_code()

    def kern(x0s, dB, t, h):
        return kernels.bsde_reflected_1d(a, b, x0s, dB, t, h, tab.ftab, tab.htab, tab.term, tab.grid, scheme)

    return _mc_grid(dom, tab, coef.horizon, data.terminal, t_nodes, x_nodes, cfg, streams, kern,
                    {"solver": "mc-reflected", "scheme": cfg.scheme, "seed": streams.seed})


def solve_penalized_bsde(
    dom: DomainSpec,
    coef: CoefficientSet,
    lift: LiftField | None,
    n_penalty: float,
    t_nodes,
    x_nodes,
    cfg: MCConfig,
    streams: PathStreams,
) -> GridFunction:
    """Penalized-path estimate u^n = Y^n + 2G; boundary data enter as 2n|x - proj x| h_tilde dt."""
    a, b = _interval(dom)
    if not coef.zero_divergence and lift is None:
        raise LiftMismatchError("a lift is required for a nonzero divergence field")
    data = linear_data_1d(coef, lift)
    if lift is not None and data.g is not None:
        check_lift(lift, data.g, dom)
    tab = build_tables(dom, data, coef.horizon, cfg.table_times, cfg.lift_nodes, extended=True)

    def kern(x0s, dB, t, h):
        return kernels.bsde_penalized_1d(a, b, x0s, dB, t, h, n_penalty, tab.ftab, tab.htab, tab.term, tab.grid)

    return _mc_grid(dom, tab, coef.horizon, data.terminal, t_nodes, x_nodes, cfg, streams, kern,
                    {"solver": "mc-penalized", "n_penalty": float(n_penalty), "seed": streams.seed})


# ---------------------------------------------------------------------------
# Picard (probabilistic route)


def frozen_data_1d(coef: CoefficientSet, u: GridFunction, cfg: MCConfig, dom: DomainSpec) -> Data1D:
    """Linear data at (u^k, u^k_x); the lift is recomputed from g^k."""
    tg, xg, U, Z = u.t_nodes, u.x_nodes, u.values, u.gradient

    def uz(t, x):
        return bilinear(tg, xg, U, t, x), bilinear(tg, xg, Z, t, x)

    def f(t, x):
        y, z = uz(t, x)
        val = coef.f(t, np.asarray(x)[..., None], y, z[..., None])
        if coef.drift is not None:
            val = val + coef.drift(np.asarray(x)[..., None])[..., 0] * z
        return val

    def g(t, x):
        y, z = uz(t, x)
        return coef.g(t, np.asarray(x)[..., None], y, z[..., None])[..., 0]

    def h(t, x):
        y, _ = uz(t, x)
        return coef.h(t, np.asarray(x)[..., None], y)

    lift = None
    if not coef.zero_divergence:
        ts = np.linspace(0.0, coef.horizon, cfg.table_times)
        lift = solve_lift_spacetime(lambda t, x: g(t, x[..., 0])[..., None], dom, cfg.lift_nodes, ts)
    return Data1D(lambda x: coef.phi(x[..., None]), f, None if coef.zero_divergence else g, h, lift)


@dataclass(frozen=True)
class DistanceConfig:
    paths: int = 4000
    lam: float = 0.0
    mu: float = 0.0
    delta: float = 0.0
    scheme: str = "reflection"


def _distance_paths(dom, diff: GridFunction, dcfg: DistanceConfig, dt: float, T: float, streams: PathStreams, workers: int):
    """Per-path weighted functional of (du, dz) from uniform starting points."""
    a, b = _interval(dom)
    tg, xg = diff.t_nodes, diff.x_nodes
    if not (np.allclose(np.diff(tg), tg[1] - tg[0]) and np.allclose(np.diff(xg), xg[1] - xg[0])):
        raise ValueError("Picard grids must be uniform in t and x")
    wdr = np.ascontiguousarray(diff.values**2 + diff.gradient**2)
    wdl = np.ascontiguousarray(dcfg.delta * diff.values**2)
    grid = np.array([tg[0], tg[1] - tg[0], xg[0], xg[1] - xg[0]])
    M, h = _steps(0.0, T, dt)
    st = streams.child("distance")
    scheme = kernels.REFLECTION if dcfg.scheme == "reflection" else kernels.PROJECTION

    def run(first, count):
        x0 = a + (b - a) * st.uniforms(first, count, 1)[:, 0]
        dB = st.increments(first, count, M, 1, h)[..., 0]
        return kernels.weighted_functional_1d(a, b, x0, dB, h, dcfg.lam, dcfg.mu, wdr, wdl, grid, scheme)

    return map_batches(run, dcfg.paths, workers)


def picard_solve_mc(
    dom: DomainSpec,
    coef: CoefficientSet,
    t_nodes,
    x_nodes,
    cfg: MCConfig,
    streams: PathStreams,
    tol: float,
    max_iter: int,
    asm: AssumptionSet | None = None,
    distance: DistanceConfig | None = None,
) -> tuple[GridFunction, PicardState]:
    """u^0 = 0; each iterate is a linear Monte Carlo solve with data frozen at the previous one.

    The same streams are reused at every iteration (common random numbers).
    Distances d_k are the weighted path functional of u^{k+1} - u^k with the
    weight exp(lambda r + mu L_r) from the probabilistic contraction witness.
    """
    if asm is not None:
        if not asm.gamma_condition() or not asm.trace_condition():
            raise ValueError("assumption set is not feasible for the Picard iteration")
    if distance is None:
        distance = DistanceConfig()
        if asm is not None:
            w = probabilistic_constants(asm)
            if w.feasible:
                distance = DistanceConfig(distance.paths, w.lam, w.mu, w.delta, cfg.scheme)
    t_nodes = np.asarray(t_nodes, dtype=np.float64)
    x_nodes = np.asarray(x_nodes, dtype=np.float64)
    u = GridFunction(t_nodes, x_nodes, np.zeros((t_nodes.size, x_nodes.size)), None, {"solver": "mc-picard"})
    state = PicardState(norm=f"lambda={distance.lam:.4g},mu={distance.mu:.4g},delta={distance.delta:.4g}", current=u)
    prev_paths = None
    for k in range(max_iter):
        data = frozen_data_1d(coef, u, cfg, dom)
        new = solve_linear_mc(dom, coef, data.lift, t_nodes, x_nodes, cfg, streams, data=data)
        new = new.with_values(new.values, new.std_errors, solver="mc-picard", iteration=k + 1)
        per_path = _distance_paths(dom, new.with_values(new.values - u.values), distance, cfg.dt, coef.horizon, streams, cfg.workers)
        d, d_se = mean_se(per_path)
        r_se = None
        if prev_paths is not None and prev_paths.mean() > 0:
            r = per_path.mean() / prev_paths.mean()
            _, r_se = mean_se((per_path - r * prev_paths) / prev_paths.mean())
        state.record(float(d), float(d_se), None if r_se is None else float(r_se))
        state.k = k + 1
        state.current = new
        logger.info("mc picard k=%d d=%.3e ratio=%s", k + 1, d, state.ratios[-1])
        if state.non_contracting():
            state.alarm = True
            logger.warning("mc picard: ratio above 1 + 3 SE on two consecutive iterations")
        prev_paths = per_path
        u = new
        if math.sqrt(max(float(d), 0.0)) <= tol:
            state.converged = True
            break
    return u, state
