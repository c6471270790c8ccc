"""Contraction constants and bookkeeping shared by the FD and MC Picard drivers.

Distances are squared weighted norms: the analytic route uses
``int_0^T e^{theta s} (|v_s|^2 + |grad v_s|^2) ds`` and the probabilistic
route the path functional with weight ``exp(lambda r + mu L_r)``. The
contraction inequalities are stated for these squared quantities, so the
ratios r_k = d_k / d_{k-1} are compared against rho directly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import AssumptionSet
from .grid import GridFunction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalyticWitness:
    feasible: bool
    eps: float = math.nan
    eps1: float = math.nan
    theta: float = math.nan
    rho: float = math.nan
    binding: str = ""


@dataclass(frozen=True)
class ProbabilisticWitness:
    feasible: bool
    eps1: float = math.nan
    eps2: float = math.nan
    eps3: float = math.nan
    lam: float = math.nan
    mu: float = math.nan
    rho: float = math.nan
    delta: float = math.nan
    binding: str = ""


@dataclass(frozen=True)
class ContractionConstants:
    analytic: AnalyticWitness
    probabilistic: ProbabilisticWitness

    def as_dict(self) -> dict:
        from dataclasses import asdict

        return {"analytic": asdict(self.analytic), "probabilistic": asdict(self.probabilistic)}


def _eps_grid(points: int) -> np.ndarray:
    # geometric near 0, covering (0, 2]
    return np.unique(np.concatenate([np.geomspace(1e-4, 2.0, points), np.linspace(2.0 / points, 2.0, points)]))


def analytic_constants(asm: AssumptionSet, points: int = 400) -> AnalyticWitness:
    a, b, g, tr2 = asm.alpha, asm.beta, asm.gamma, asm.trace_norm**2
    if not asm.trace_condition():
        return AnalyticWitness(False, binding="beta * ||Tr||^2 < 1")
    e = _eps_grid(points)
    E, E1 = np.meshgrid(e, e, indexing="ij")
    den = 1.0 - g * E - b * tr2 * E1
    num = a * E + g / E + b * tr2 / E1
    theta = 1.0 - g * E + a / E
    ok = (den > 0) & (theta > 0)
    rho = np.where(ok, num / np.where(ok, den, 1.0), np.inf)
    i, j = np.unravel_index(np.argmin(rho), rho.shape)
    r = float(rho[i, j])
    if not r < 1.0:
        return AnalyticWitness(False, float(E[i, j]), float(E1[i, j]), float(theta[i, j]), r, binding="rho < 1")
    return AnalyticWitness(True, float(E[i, j]), float(E1[i, j]), float(theta[i, j]), r)


def probabilistic_constants(asm: AssumptionSet, eps2: float = 0.1, points: int = 400) -> ProbabilisticWitness:
    a2, b2, g2 = asm.alpha**2, asm.beta**2, asm.gamma**2
    if not asm.gamma_condition():
        return ProbabilisticWitness(False, binding="2 * sqrt(2) * gamma < 1")
    e = _eps_grid(points)
    e3 = e[e < 1.0]
    E1, E3 = np.meshgrid(e, e3, indexing="ij")
    s = a2 / E1 + g2 / E3
    ok = s < 1.0 - E3
    rho = np.where(ok, s / (1.0 - E3), np.inf)
    i, j = np.unravel_index(np.argmin(rho), rho.shape)
    if not np.isfinite(rho[i, j]):
        return ProbabilisticWitness(False, binding="alpha^2/eps1 + gamma^2/eps3 < 1 - eps3")
    eps1, eps3, sv = float(E1[i, j]), float(E3[i, j]), float(s[i, j])
    if sv == 0.0:
        # all constants vanish: any weight works and the boundary term drops out
        delta = 0.0 if b2 == 0.0 else math.inf
        mu = eps2 if b2 == 0.0 else math.inf
    else:
        delta = (b2 / eps3) / sv
        mu = eps2 + (1.0 - eps3) * delta
    lam = 1.0 - eps3 + eps1
    return ProbabilisticWitness(True, eps1, eps2, eps3, lam, mu, float(rho[i, j]), delta)


def contraction_constants(asm: AssumptionSet, eps2: float = 0.1) -> ContractionConstants:
    return ContractionConstants(analytic_constants(asm), probabilistic_constants(asm, eps2))


@dataclass
class PicardState:
    """History of a Picard run; ``ratios[k]`` is d_k / d_{k-1} (None for k = 0)."""

    k: int = 0
    current: GridFunction | None = None
    distances: list[float] = field(default_factory=list)
    distance_se: list[float] = field(default_factory=list)
    ratios: list[float | None] = field(default_factory=list)
    ratio_se: list[float | None] = field(default_factory=list)
    alarm: bool = False
    converged: bool = False
    norm: str = ""

    def record(self, d: float, se: float = 0.0, ratio_se: float | None = None) -> None:
        if d < 0:
            raise ValueError("distance must be nonnegative")
        self.distances.append(float(d))
        self.distance_se.append(float(se))
        if len(self.distances) == 1:
            self.ratios.append(None)
            self.ratio_se.append(None)
        else:
            prev = self.distances[-2]
            self.ratios.append(float(d / prev) if prev > 0 else (0.0 if d == 0 else math.inf))
            self.ratio_se.append(None if ratio_se is None else float(ratio_se))

    def non_contracting(self, threshold: float = 1.0, last: int = 2) -> bool:
        """True when the last ``last`` ratios all exceed threshold + 3 SE."""
        rs = [(r, s or 0.0) for r, s in zip(self.ratios, self.ratio_se) if r is not None]
        if len(rs) < last:
            return False
        return all(r > threshold + 3.0 * s for r, s in rs[-last:])

    def as_records(self) -> list[dict]:
        return [
            {"k": i, "distance": d, "distance_se": s, "ratio": r, "ratio_se": rs}
            for i, (d, s, r, rs) in enumerate(zip(self.distances, self.distance_se, self.ratios, self.ratio_se))
        ]
