"""Penalized and reflected path ensembles, and stochastic integrals along them.

Reflected paths use the projection scheme: the Euler proposal is projected
onto the closure and the pushed distance is the local-time increment.
Penalized paths use explicit Euler for the inward drift ``-n delta(x)``,
switching to the exact flow of the penalization ODE when ``n dt > 0.5``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import kernels
from .geometry import INTERVAL, DomainSpec
from .rng import PathStreams, map_batches, mean_se

logger = logging.getLogger(__name__)

Field = Callable[[NDArray, NDArray], NDArray]

REFLECTED = "reflected"
PENALIZED = "penalized"


class PathError(ValueError):
    pass


@dataclass(frozen=True)
class PathBundle:
    """An ensemble of discretized trajectories; arrays carry a leading path axis."""

    kind: str
    t_grid: NDArray[np.float64]
    states: NDArray[np.float64]  # (P, M+1, N)
    brownian_increments: NDArray[np.float64]  # (P, M, N)
    local_time_increments: NDArray[np.float64] | None = None  # (P, M)
    contact_normals: NDArray[np.float64] | None = None  # (P, M, N)
    penal_increments: NDArray[np.float64] | None = None  # (P, M, N)
    n_penalty: float | None = None
    escaped: bool = False

    @property
    def paths(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.t_grid.size - 1

    @property
    def dt(self) -> NDArray[np.float64]:
        return np.diff(self.t_grid)

    def local_time(self) -> NDArray[np.float64]:
        """Cumulative L_{t_k}, shape (P, M+1)."""
        self._require_reflected("local_time")
        out = np.zeros((self.paths, self.steps + 1))
        np.cumsum(self.local_time_increments, axis=1, out=out[:, 1:])
        return out

    def push_process(self) -> NDArray[np.float64]:
        """K_t: cumulative sum of n dL (reflected) or of the penalization increments."""
        P, M, N = self.brownian_increments.shape
        out = np.zeros((P, M + 1, N))
        inc = (
            self.contact_normals * self.local_time_increments[..., None]
            if self.kind == REFLECTED
            else self.penal_increments
        )
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out

    def _require_reflected(self, op: str) -> None:
        if self.kind != REFLECTED:
            raise PathError(f"{op} requires a reflected bundle (got {self.kind})")


def _time_grid(t_start: float, T: float, dt: float) -> NDArray[np.float64]:
    if not dt > 0:
        raise PathError(f"dt must be positive, got {dt}")
    if not T > t_start:
        raise PathError(f"T must exceed t_start ({T} <= {t_start})")
    steps = max(1, int(round((T - t_start) / dt)))
    if abs(steps * dt - (T - t_start)) > 1e-9 * max(1.0, T):
        logger.debug("dt=%g does not divide [%g, %g]; using %d equal steps", dt, t_start, T, steps)
    return np.linspace(t_start, T, steps + 1)


def _start_points(dom: DomainSpec, x0: ArrayLike, paths: int) -> NDArray[np.float64]:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim == 0:
        x0 = x0[None]
    if x0.ndim == 1:
        if x0.shape[0] != dom.dimension:
            raise PathError(f"x0 has dimension {x0.shape[0]}, domain has {dom.dimension}")
        x0 = np.broadcast_to(x0, (paths, dom.dimension))
    if x0.shape != (paths, dom.dimension):
        raise PathError(f"x0 must have shape ({dom.dimension},) or ({paths}, {dom.dimension})")
    return np.ascontiguousarray(x0)


def _draw(streams, increments, first, paths, steps, dim, dt):
    if increments is not None:
        inc = np.asarray(increments, dtype=np.float64)
        if inc.ndim == 2 and dim == 1:
            inc = inc[..., None]
        if inc.shape != (paths, steps, dim):
            raise PathError(f"increments must have shape {(paths, steps, dim)}, got {inc.shape}")
        return np.ascontiguousarray(inc)
    if streams is None:
        raise PathError("either rng streams or explicit increments are required")
    return streams.increments(first, paths, steps, dim, dt)


def _check_escape(states: NDArray, escape_radius: float | None) -> bool:
    if escape_radius is None:
        return False
    bad = not np.all(np.isfinite(states)) or np.max(np.abs(states)) > escape_radius
    if bad:
        logger.warning("penalized paths left the escape radius %g", escape_radius)
    return bool(bad)


def simulate_penalized(
    dom: DomainSpec,
    drift: Callable[[NDArray], NDArray] | None,
    n_penalty: float,
    x0: ArrayLike,
    t_start: float,
    T: float,
    dt: float,
    streams: PathStreams | None,
    paths: int = 1,
    first: int = 0,
    increments: ArrayLike | None = None,
    escape_radius: float | None = 1e3,
) -> PathBundle:
    """Euler scheme for dX = dB + b dt - n delta(X) dt.

    ``increments`` replaces the random draw (zero noise, common numbers).
    A start outside the closure is allowed here; it relaxes toward it.
    """
    if not n_penalty > 0:
        raise PathError("n_penalty must be positive")
    tg = _time_grid(t_start, T, dt)
    h = float(tg[1] - tg[0])
    start = _start_points(dom, x0, paths)
    dB = _draw(streams, increments, first, paths, tg.size - 1, dom.dimension, h)
    X, dK = kernels.penalized_paths(dom.kind, dom.params, start, dB, n_penalty, h, drift)
    return PathBundle(
        PENALIZED, tg, X, dB, penal_increments=dK, n_penalty=float(n_penalty),
        escaped=_check_escape(X, escape_radius),
    )


def simulate_reflected(
    dom: DomainSpec,
    drift: Callable[[NDArray], NDArray] | None,
    x0: ArrayLike,
    t_start: float,
    T: float,
    dt: float,
    streams: PathStreams | None,
    paths: int = 1,
    first: int = 0,
    increments: ArrayLike | None = None,
) -> PathBundle:
    tg = _time_grid(t_start, T, dt)
    h = float(tg[1] - tg[0])
    start = _start_points(dom, x0, paths)
    if not np.all(dom.contains(start)):
        raise PathError("reflected paths must start in the closed domain")
    dB = _draw(streams, increments, first, paths, tg.size - 1, dom.dimension, h)
    X, dL, nrm = kernels.reflected_paths(dom.kind, dom.params, start, dB, drift, h)
    return PathBundle(REFLECTED, tg, X, dB, local_time_increments=dL, contact_normals=nrm)


def simulate_coupled(
    dom: DomainSpec,
    drift,
    n_penalty: float,
    x0: ArrayLike,
    T: float,
    dt: float,
    streams: PathStreams | None,
    paths: int = 1,
    first: int = 0,
    increments: ArrayLike | None = None,
    t_start: float = 0.0,
) -> tuple[PathBundle, PathBundle]:
    """Penalized and reflected ensembles driven by the same Brownian increments."""
    tg = _time_grid(t_start, T, dt)
    dB = _draw(streams, increments, first, paths, tg.size - 1, dom.dimension, float(tg[1] - tg[0]))
    pen = simulate_penalized(dom, drift, n_penalty, x0, t_start, T, dt, None, paths, increments=dB)
    ref = simulate_reflected(dom, drift, x0, t_start, T, dt, None, paths, increments=dB)
    return pen, ref


# ---------------------------------------------------------------------------
# integrals


def _eval_field(field: Field, t: NDArray, x: NDArray) -> NDArray:
    out = np.asarray(field(t, x), dtype=np.float64)
    return np.broadcast_to(out, x.shape)


def forward_integral(field: Field, path: PathBundle) -> NDArray[np.float64]:
    """Left-point sums sum_k <field(t_k, X_k), dB_k>, one value per path."""
    t = path.t_grid[None, :-1]
    vals = _eval_field(field, t, path.states[:, :-1])
    return np.einsum("pkn,pkn->p", vals, path.brownian_increments)


def backward_increments(path: PathBundle) -> NDArray[np.float64]:
    path._require_reflected("backward integral")
    return -path.brownian_increments - 2.0 * path.contact_normals * path.local_time_increments[..., None]


def backward_integral(field: Field, path: PathBundle) -> NDArray[np.float64]:
    """Right-point sums against dB_bar = -dB - 2 n dL."""
    dBbar = backward_increments(path)
    vals = _eval_field(field, path.t_grid[None, 1:], path.states[:, 1:])
    return np.einsum("pkn,pkn->p", vals, dBbar)


def star_integral(field: Field, path: PathBundle) -> NDArray[np.float64]:
    """Forward + backward + 2 sum <field, n> dL, boundary terms at the projected point."""
    path._require_reflected("star integral")
    left = _eval_field(field, path.t_grid[None, :-1], path.states[:, :-1])
    right = _eval_field(field, path.t_grid[None, 1:], path.states[:, 1:])
    dB = path.brownian_increments
    # per step: <f_k - f_{k+1}, dB> - 2<f_{k+1}, n> dL + 2<f_{k+1}, n> dL
    return np.einsum("pkn,pkn->p", left - right, dB)


def star_integral_terms(field: Field, path: PathBundle) -> tuple[NDArray, NDArray, NDArray]:
    """The three summands separately: forward, backward, boundary."""
    path._require_reflected("star integral")
    right = _eval_field(field, path.t_grid[None, 1:], path.states[:, 1:])
    bnd = 2.0 * np.einsum("pkn,pkn,pk->p", right, path.contact_normals, path.local_time_increments)
    return forward_integral(field, path), backward_integral(field, path), bnd


def quadratic_variation(field: Field, path: PathBundle) -> NDArray[np.float64]:
    """Realized bracket sum_k <field(t_k, X_k), dB_k>^2 of the forward integral."""
    vals = _eval_field(field, path.t_grid[None, :-1], path.states[:, :-1])
    return np.sum(np.einsum("pkn,pkn->pk", vals, path.brownian_increments) ** 2, axis=1)


# ---------------------------------------------------------------------------
# ensemble statistics


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    se: float
    overflow: bool
    paths: int


def local_time_exp_moment(
    dom: DomainSpec,
    x0: ArrayLike,
    mu: float,
    T: float,
    dt: float,
    paths: int,
    streams: PathStreams,
    workers: int = 1,
    deterministic: bool = True,
    scheme: str = "projection",
) -> MomentEstimate:
    """Monte Carlo estimate of E^x[exp(mu L_T)] from reflected paths."""
    if mu < 0:
        raise PathError("mu must be nonnegative")
    LT = local_times(dom, x0, T, dt, paths, streams, workers, scheme=scheme)
    expo = mu * LT
    overflow = bool(np.any(expo > 700.0))
    if overflow:
        logger.warning("exp(mu L_T) overflows for mu=%g; reduce mu", mu)
        return MomentEstimate(math.inf, math.inf, True, paths)
    m, s = mean_se(np.exp(expo), deterministic=deterministic)
    return MomentEstimate(float(m), float(s), False, paths)


def local_times(dom, x0, T, dt, paths, streams, workers=1, t_start=0.0, scheme="projection") -> NDArray[np.float64]:
    """Samples of L_T.

    ``scheme="projection"`` sums the projection pushes (O(sqrt(dt)) low bias).
    ``scheme="reflection"`` (intervals only) folds the Euler step and adds the
    conditional mean of the wall local time given the step endpoints; its
    mean carries no time-step bias, but nonlinear functionals of L are
    smoothed (E[exp(mu L)] is biased low by Jensen).
    ``scheme="exact"`` (intervals only) samples each step's push from the
    exact law of one-wall reflection; use it for moments of L.
    """
    if scheme not in ("projection", "reflection", "exact"):
        raise PathError(f"unknown scheme {scheme!r}")
    if scheme != "projection" and dom.kind != INTERVAL:
        raise PathError(f"the {scheme} scheme is implemented for intervals only")
    tg = _time_grid(t_start, T, dt)
    h = float(tg[1] - tg[0])
    M = tg.size - 1

    def run(first, count):
        start = _start_points(dom, x0, count) if np.ndim(x0) <= 1 else np.asarray(x0)[first : first + count]
        dB = streams.increments(first, count, M, dom.dimension, h)
        if scheme == "reflection":
            a, b = dom.params
            return kernels.bridge_local_time_1d(a, b, start[:, 0], dB[..., 0], h)
        if scheme == "exact":
            a, b = dom.params
            U = streams.step_uniforms(first, count, M)
            return kernels.skorokhod_local_time_1d(a, b, start[:, 0], dB[..., 0], U, h)
        return kernels.reflected_local_time(dom.kind, dom.params, np.ascontiguousarray(start), dB)

    return map_batches(run, paths, workers)


@dataclass(frozen=True)
class GapStats:
    """Penalization gaps per n: sup|X^n - X|^p and sup|K^n - K| (means and SEs)."""

    ns: NDArray[np.float64]
    sup_dist_mean: NDArray[np.float64]
    sup_dist_se: NDArray[np.float64]
    sup_push_mean: NDArray[np.float64]
    sup_push_se: NDArray[np.float64]
    # SE of consecutive paired differences (common random numbers)
    dist_step_se: NDArray[np.float64]
    push_step_se: NDArray[np.float64]
    mean_local_time: float
    power: float


def penalization_gaps(
    dom: DomainSpec,
    ns,
    x0: ArrayLike,
    T: float,
    dt: float,
    paths: int,
    streams: PathStreams,
    power: float = 2.0,
    workers: int = 1,
) -> GapStats:
    ns = np.asarray(ns, dtype=np.float64)
    tg = _time_grid(0.0, T, dt)
    h = float(tg[1] - tg[0])
    M = tg.size - 1

    def run(first, count):
        start = _start_points(dom, x0, count)
        dB = streams.increments(first, count, M, dom.dimension, h)
        sx, sk, LT = kernels.coupled_gaps(dom.kind, dom.params, start, dB, ns, h, power)
        return np.concatenate([sx, sk, LT[:, None]], axis=1)

    res = map_batches(run, paths, workers)
    J = ns.size
    sx, sk, LT = res[:, :J], res[:, J : 2 * J], res[:, -1]
    mx, ex = mean_se(sx)
    mk, ek = mean_se(sk)
    _, dx = mean_se(np.diff(sx, axis=1)) if J > 1 else (None, np.zeros(0))
    _, dk = mean_se(np.diff(sk, axis=1)) if J > 1 else (None, np.zeros(0))
    return GapStats(ns, mx, ex, mk, ek, np.atleast_1d(dx), np.atleast_1d(dk), float(LT.mean()), power)


@dataclass(frozen=True)
class StarEstimate:
    """E[star integral] at the coarsest and finest steps, and the extrapolation to dt -> 0."""

    coarse_mean: float
    coarse_se: float
    fine_mean: float
    fine_se: float
    extrapolated_mean: float
    extrapolated_se: float
    dt_coarse: float
    dt_fine: float
    paths: int
    levels: int = 2
    level_means: tuple[float, ...] = ()


def extrapolation_weights(steps: ArrayLike) -> NDArray[np.float64]:
    """Weights w with sum w = 1 that cancel the h^{1/2}, h, h^{3/2}, ... terms over the given steps."""
    h = np.asarray(steps, dtype=np.float64)
    V = np.vstack([h ** (0.5 * j) for j in range(h.size)])
    e = np.zeros(h.size)
    e[0] = 1.0
    return np.linalg.solve(V, e)


def star_expectation(
    field: Field,
    dom: DomainSpec,
    x0: ArrayLike,
    T: float,
    dt: float,
    paths: int,
    streams: PathStreams,
    refine: int = 4,
    workers: int = 1,
    batch: int = 256,
    levels: int = 2,
) -> StarEstimate:
    """Ensemble mean of the star integral with a common-random-number refinement.

    The discrete star integral has a bias expanding in powers of sqrt(dt)
    (the local-time increments correlate with the Brownian ones within a
    step). Level i uses step dt / refine^i on the same Brownian path, the
    coarser increments being sums of finer ones, and the per-path values
    are combined with weights cancelling the first ``levels - 1`` bias
    terms. With two levels this is (sqrt(r) E_fine - E_coarse) / (sqrt(r) - 1).
    """
    if levels < 2 or refine < 2:
        raise PathError("star_expectation needs levels >= 2 and refine >= 2")
    tg = _time_grid(0.0, T, dt)
    M = tg.size - 1
    h = float(tg[1] - tg[0])
    R = refine ** (levels - 1)
    steps = [h / refine**i for i in range(levels)]
    w = extrapolation_weights(steps)

    def run(first, count):
        start = _start_points(dom, x0, count)
        fine = streams.increments(first, count, M * R, dom.dimension, h / R)
        cols = []
        for i in range(levels):
            k = refine ** (levels - 1 - i)
            inc = fine if k == 1 else fine.reshape(count, M * R // k, k, dom.dimension).sum(axis=2)
            b = simulate_reflected(dom, None, start, 0.0, T, steps[i], None, count, increments=inc)
            cols.append(star_integral(field, b))
        S = np.stack(cols, axis=1)
        return np.concatenate([S, (S @ w)[:, None]], axis=1)

    vals = map_batches(run, paths, workers, batch)
    m, s = mean_se(vals)
    return StarEstimate(float(m[0]), float(s[0]), float(m[levels - 1]), float(s[levels - 1]), float(m[-1]),
                        float(s[-1]), h, steps[-1], paths, levels, tuple(float(v) for v in m[:levels]))
