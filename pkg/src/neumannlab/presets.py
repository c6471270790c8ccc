"""Built-in coefficient families, selected by name (config key ``problem.preset``).

All presets live on the interval (-1, 1) with horizon T = 1 unless a
parameter says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import AssumptionSet, CoefficientSet, SeparableField


@dataclass(frozen=True)
class Preset:
    coef: CoefficientSet
    assumptions: AssumptionSet
    domain: tuple[float, float] = (-1.0, 1.0)


_REGISTRY: dict[str, Callable[..., Preset]] = {}


def register_preset(name: str):
    def deco(fn):
        _REGISTRY[name] = fn
        return fn

    return deco


def preset_names() -> list[str]:
    return sorted(_REGISTRY)


def get_preset(name: str, **params) -> Preset:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(preset_names())}") from None
    return factory(**params)


def _x(x):
    return np.asarray(x, dtype=np.float64)[..., 0]


@register_preset("constant")
def constant(c: float = 1.0, T: float = 1.0) -> Preset:
    coef = CoefficientSet(
        "constant",
        terminal=lambda x: np.full(np.shape(x)[:-1], float(c)),
        horizon=T,
        zero_divergence=True,
        exact=lambda t, x: np.full(np.broadcast_shapes(np.shape(t), np.shape(x)), float(c)),
    )
    return Preset(coef, AssumptionSet(K_bound=1.0, trace_norm=1.2))


@register_preset("manufactured_g0")
def manufactured_g0(T: float = 1.0) -> Preset:
    """u = exp(-t) cos(pi x); zero flux at both ends, no divergence term."""
    k = 1.0 + 0.5 * np.pi**2

    def exact(t, x):
        return np.exp(-np.asarray(t)) * np.cos(np.pi * np.asarray(x))

    coef = CoefficientSet(
        "manufactured_g0",
        terminal=lambda x: np.exp(-T) * np.cos(np.pi * _x(x)),
        reaction=lambda t, x, y, z: k * np.exp(-np.asarray(t)) * np.cos(np.pi * _x(x)),
        horizon=T,
        zero_divergence=True,
        exact=exact,
    )
    return Preset(coef, AssumptionSet(K_bound=k, C_space=k * np.pi, trace_norm=1.2))


@register_preset("manufactured_gx")
def manufactured_gx(T: float = 1.0) -> Preset:
    """u = exp(-t) x^2 / 2 with g = exp(-t) x / 2 and f = u."""

    def exact(t, x):
        return np.exp(-np.asarray(t)) * np.asarray(x) ** 2 / 2.0

    def g(t, x, y=0.0, z=0.0):
        return np.exp(-np.asarray(t, dtype=np.float64))[..., None] * np.asarray(x) / 2.0

    coef = CoefficientSet(
        "manufactured_gx",
        terminal=lambda x: np.exp(-T) * _x(x) ** 2 / 2.0,
        reaction=lambda t, x, y, z: np.exp(-np.asarray(t)) * _x(x) ** 2 / 2.0,
        divergence_field=g,
        horizon=T,
        separable=SeparableField(
            time_factor=lambda t: np.exp(-np.asarray(t)),
            time_derivative=lambda t: -np.exp(-np.asarray(t)),
            space_factor=lambda x: np.asarray(x) / 2.0,
        ),
        exact=exact,
    )
    return Preset(coef, AssumptionSet(K_bound=1.0, C_space=1.0, trace_norm=1.2))


@register_preset("nonlinear_small_gamma")
def nonlinear_small_gamma(T: float = 1.0) -> Preset:
    """Small Lipschitz constants: alpha = 0.2, beta = 0.1, gamma = 0.1."""

    def f(t, x, y, z):
        z = np.asarray(z, dtype=np.float64)
        z1 = z[..., 0] if z.ndim and z.shape[-1] == 1 else z
        return 0.1 * np.sin(y) + 0.1 * np.sin(z1) + 0.5 * np.cos(np.pi * _x(x))

    def g(t, x, y, z):
        shape = np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], np.shape(y))
        return (0.1 * np.sin(np.broadcast_to(y, shape)))[..., None]

    def h(t, x, y):
        return -0.1 * np.asarray(y) + 0.1

    coef = CoefficientSet(
        "nonlinear_small_gamma",
        terminal=lambda x: 0.5 * np.cos(np.pi * _x(x)),
        reaction=f,
        divergence_field=g,
        boundary_reaction=h,
        horizon=T,
        linear=False,
    )
    return Preset(coef, AssumptionSet(alpha=0.2, beta=0.1, gamma=0.1, K_bound=1.0, C_space=2.0, trace_norm=1.2))


@register_preset("relaxation")
def relaxation(c: float = 1.0, T: float = 1.0) -> Preset:
    """f = -y + c with terminal value c: the fixed point is u = c."""
    coef = CoefficientSet(
        "relaxation",
        terminal=lambda x: np.full(np.shape(x)[:-1], float(c)),
        reaction=lambda t, x, y, z: -np.asarray(y, dtype=np.float64) + c,
        horizon=T,
        linear=False,
        zero_divergence=True,
        exact=lambda t, x: np.full(np.broadcast_shapes(np.shape(t), np.shape(x)), float(c)),
    )
    return Preset(coef, AssumptionSet(alpha=1.0, K_bound=max(1.0, abs(c)), trace_norm=1.2))
