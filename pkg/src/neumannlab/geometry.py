"""Convex domains with a calibrated interior function and penalization field.

A domain carries everything the rest of the package needs from the boundary:
the interior function ``psi`` (positive inside, zero on the boundary, unit
gradient there), the inward normal, the closest-point projection onto the
closure, the squared distance ``d`` and the penalization field
``delta = grad d = 2 (x - proj(x))``.

Points are arrays of shape ``(..., N)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

INTERVAL = 0
BALL = 1

_KIND_NAMES = {INTERVAL: "interval", BALL: "ball"}


@dataclass(frozen=True)
class DomainSpec:
    """A convex C^2 domain D in R^N.

    ``kind`` selects the closed forms; ``params`` is the flat parameter vector
    consumed by the compiled kernels: ``[a, b]`` for an interval and
    ``[r, c_1, ..., c_N]`` for a ball.
    """

    kind: int
    dimension: int
    params: NDArray[np.float64] = field(repr=False)

    @property
    def name(self) -> str:
        return _KIND_NAMES[self.kind]

    # -- closed forms -----------------------------------------------------
    def _center_radius(self) -> tuple[NDArray[np.float64], float]:
        if self.kind == INTERVAL:
            a, b = self.params
            return np.array([0.5 * (a + b)]), 0.5 * (b - a)
        return self.params[1:], float(self.params[0])

    def interior_fn(self, x: ArrayLike) -> NDArray[np.float64]:
        """psi(x) = (r^2 - |x - c|^2) / (2r)."""
        x = _as_points(x, self.dimension)
        c, r = self._center_radius()
        return (r * r - np.sum((x - c) ** 2, axis=-1)) / (2.0 * r)

    def interior_grad(self, x: ArrayLike) -> NDArray[np.float64]:
        x = _as_points(x, self.dimension)
        c, r = self._center_radius()
        return -(x - c) / r

    def boundary_normal(self, x: ArrayLike) -> NDArray[np.float64]:
        """Unit inward normal; equals ``interior_grad`` on the boundary."""
        return self.interior_grad(x)

    def projection(self, x: ArrayLike) -> NDArray[np.float64]:
        x = _as_points(x, self.dimension)
        if self.kind == INTERVAL:
            a, b = self.params
            return np.clip(x, a, b)
        c, r = self._center_radius()
        rel = x - c
        norm = np.linalg.norm(rel, axis=-1, keepdims=True)
        scale = np.where(norm > r, r / np.where(norm > 0, norm, 1.0), 1.0)
        return np.where(norm > r, c + rel * scale, x)

    def dist_sq(self, x: ArrayLike) -> NDArray[np.float64]:
        x = _as_points(x, self.dimension)
        return np.sum((x - self.projection(x)) ** 2, axis=-1)

    def penal_field(self, x: ArrayLike) -> NDArray[np.float64]:
        x = _as_points(x, self.dimension)
        return 2.0 * (x - self.projection(x))

    def contains(self, x: ArrayLike, closed: bool = True) -> NDArray[np.bool_]:
        """Membership test that does not go through ``psi``."""
        x = _as_points(x, self.dimension)
        if self.kind == INTERVAL:
            a, b = self.params
            x0 = x[..., 0]
            return (a <= x0) & (x0 <= b) if closed else (a < x0) & (x0 < b)
        c, r = self._center_radius()
        rr = np.sum((x - c) ** 2, axis=-1)
        return rr <= r * r if closed else rr < r * r

    def bounding_box(self, margin: float = 0.0) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        c, r = self._center_radius()
        return c - r - margin, c + r + margin

    @property
    def diameter(self) -> float:
        return 2.0 * self._center_radius()[1]


def _as_points(x: ArrayLike, dim: int) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dim:
        raise ValueError(f"expected points with trailing dimension {dim}, got shape {x.shape}")
    return x


def make_interval(a: float, b: float) -> DomainSpec:
    if not a < b:
        raise ValueError(f"interval requires a < b, got a={a}, b={b}")
    return DomainSpec(INTERVAL, 1, np.array([float(a), float(b)]))


def make_ball(center: ArrayLike, radius: float) -> DomainSpec:
    if not radius > 0:
        raise ValueError(f"ball requires radius > 0, got {radius}")
    c = np.atleast_1d(np.asarray(center, dtype=np.float64))
    return DomainSpec(BALL, c.size, np.concatenate([[float(radius)], c]))


def domain_from_config(kind: str, params: list[float]) -> DomainSpec:
    if kind == "interval":
        if len(params) != 2:
            raise ValueError("domain.params for an interval must be 'a, b'")
        return make_interval(*params)
    if kind == "ball":
        if len(params) < 2:
            raise ValueError("domain.params for a ball must be 'c_1, ..., c_N, radius'")
        return make_ball(params[:-1], params[-1])
    raise ValueError(f"unknown domain.kind {kind!r}")


@dataclass
class GeometryReport:
    samples: int
    max_violation: dict[str, float]
    worst_point: dict[str, list[float]]
    fd_tolerance: float

    @property
    def ok(self) -> bool:
        return all(v <= 1e-10 for v in self.max_violation.values())


def geometry_selfcheck(dom: DomainSpec, samples: int, rng_seed: int, fd_step: float = 1e-6) -> GeometryReport:
    """Sample points around the closure and measure every geometric invariant.

    Violations are reported, never raised. The finite-difference gradient
    check is reported as its excess over ``1e-6 * (1 + |x|)``.
    """
    if samples <= 0:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(rng_seed)
    lo, hi = dom.bounding_box(margin=0.5 * dom.diameter)
    x = rng.uniform(lo, hi, size=(samples, dom.dimension))

    psi = dom.interior_fn(x)
    grad = dom.interior_grad(x)
    proj = dom.projection(x)
    d = dom.dist_sq(x)
    delta = dom.penal_field(x)
    inside = dom.contains(x, closed=False)
    closure = dom.contains(x, closed=True)

    checks: dict[str, NDArray[np.float64]] = {}
    # psi > 0 exactly on the open domain
    checks["psi_sign"] = np.where(inside, np.maximum(-psi, 0.0), np.maximum(psi, 0.0))
    checks["delta_zero_on_closure"] = np.where(closure, np.linalg.norm(delta, axis=-1), 0.0)
    checks["delta_nonzero_outside"] = np.where(~closure & (np.linalg.norm(delta, axis=-1) == 0.0), 1.0, 0.0)
    checks["normal_pairing"] = np.maximum(np.sum(grad * delta, axis=-1), 0.0)
    checks["projection_idempotent"] = np.linalg.norm(dom.projection(proj) - proj, axis=-1)
    checks["distance_consistency"] = np.abs(np.sum((x - proj) ** 2, axis=-1) - d)

    # unit gradient on the boundary, probed at projections of outside points
    bpts = proj[~closure]
    if bpts.size:
        checks["unit_normal"] = np.abs(np.linalg.norm(dom.interior_grad(bpts), axis=-1) - 1.0)
        checks["boundary_psi_zero"] = np.abs(dom.interior_fn(bpts))
    fd = np.empty_like(delta)
    for i in range(dom.dimension):
        e = np.zeros(dom.dimension)
        e[i] = fd_step
        fd[:, i] = (dom.dist_sq(x + e) - dom.dist_sq(x - e)) / (2.0 * fd_step)
    tol = 1e-6 * (1.0 + np.linalg.norm(x, axis=-1))
    checks["fd_gradient_excess"] = np.maximum(np.linalg.norm(fd - delta, axis=-1) - tol, 0.0)

    max_violation = {}
    worst_point = {}
    for name, v in checks.items():
        i = int(np.argmax(v))
        max_violation[name] = float(v[i])
        src = bpts if name in ("unit_normal", "boundary_psi_zero") else x
        worst_point[name] = src[i].tolist()
        if v[i] > 1e-10:
            logger.warning("geometry invariant %s violated by %.3e at %s", name, v[i], src[i])
    return GeometryReport(samples, max_violation, worst_point, 1e-6)
