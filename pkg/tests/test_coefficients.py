from __future__ import annotations

import math

import numpy as np
import pytest

from neumannlab.coefficients import AssumptionSet, UnsupportedDomainError, check_assumptions, estimate_trace_norm
from neumannlab.geometry import make_ball, make_interval
from neumannlab.presets import get_preset, preset_names


def test_registry():
    assert {"constant", "manufactured_g0", "manufactured_gx", "nonlinear_small_gamma", "relaxation"} <= set(preset_names())
    with pytest.raises(KeyError):
        get_preset("nope")


@pytest.mark.parametrize("name", ["constant", "manufactured_g0", "manufactured_gx", "nonlinear_small_gamma", "relaxation"])
def test_declared_constants_hold(name):
    p = get_preset(name)
    rep = check_assumptions(p.coef, p.assumptions, 4000, 1)
    assert rep.ok, rep.violations


def test_violation_detected():
    p = get_preset("nonlinear_small_gamma")
    low = AssumptionSet(alpha=0.01, beta=0.1, gamma=0.1, K_bound=1.0, C_space=2.0, trace_norm=1.2)
    rep = check_assumptions(p.coef, low, 4000, 2)
    assert "H4_f_lipschitz_yz" in rep.violations


@pytest.mark.parametrize("name", ["manufactured_g0", "manufactured_gx"])
def test_manufactured_terminal_matches_exact(name):
    p = get_preset(name)
    x = np.linspace(-1, 1, 11)
    np.testing.assert_allclose(p.coef.phi(x[:, None]), p.coef.exact(p.coef.horizon, x), atol=1e-15)


def test_manufactured_g0_pde_residual():
    # du/dt + u''/2 + f = 0 pointwise, zero flux at the ends
    c = get_preset("manufactured_g0").coef
    t, x, e = 0.3, np.linspace(-1, 1, 7), 1e-5
    u = lambda t, x: c.exact(t, x)
    ut = (u(t + e, x) - u(t - e, x)) / (2 * e)
    uxx = (u(t, x + e) - 2 * u(t, x) + u(t, x - e)) / e**2
    np.testing.assert_allclose(ut + 0.5 * uxx + c.f(t, x[:, None]), 0.0, atol=1e-4)


def test_manufactured_gx_pde_and_boundary():
    # du/dt + u''/2 - g' + f = 0 inside and u' - 2 g n + h = 0 at the ends
    c = get_preset("manufactured_gx").coef
    t, x = 0.4, np.linspace(-1, 1, 9)
    et = math.exp(-t)
    ut, uxx, gx = -et * x**2 / 2, et * np.ones_like(x), et / 2 * np.ones_like(x)
    np.testing.assert_allclose(ut + 0.5 * uxx - gx + c.f(t, x[:, None]), 0.0, atol=1e-14)
    for xb, n in ((-1.0, 1.0), (1.0, -1.0)):
        ux = et * xb
        g = c.g(t, np.array([xb]))[0]
        assert abs(ux * n - 2 * g * n + c.h(t, np.array([xb]))) < 1e-14


def test_trace_norm_estimate_matches_closed_form():
    # sup (v(-1)^2 + v(1)^2) / ||v||_{H^1}^2 on (-1, 1) is coth(1), attained by cosh
    exact = math.sqrt(1.0 / math.tanh(1.0))
    est = [estimate_trace_norm(make_interval(-1, 1), n) for n in (1, 3, 5, 9, 17, 33, 65, 129)]
    assert all(b >= a - 1e-12 for a, b in zip(est, est[1:]))
    assert est[-1] <= exact + 1e-12
    assert abs(est[-1] - exact) < 1e-3
    assert get_preset("nonlinear_small_gamma").assumptions.trace_norm >= exact


def test_trace_norm_unsupported():
    with pytest.raises(UnsupportedDomainError):
        estimate_trace_norm(make_ball([0, 0], 1.0), 10)


def test_conditions():
    assert AssumptionSet(beta=0.1, trace_norm=1.2).trace_condition()
    assert not AssumptionSet(beta=1.0, trace_norm=1.2).trace_condition()
    assert not AssumptionSet(gamma=0.5).gamma_condition()
    assert AssumptionSet(gamma=0.35).gamma_condition()
