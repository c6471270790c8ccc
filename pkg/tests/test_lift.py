from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neumannlab.geometry import make_ball, make_interval
from neumannlab.lift import (
    LiftError, enclosing_interval, eval_lift, smooth_cutoff, smooth_extension, solve_lift_slice,
    solve_lift_spacetime, weak_residuals,
)
from neumannlab.presets import get_preset


def cosh_error(nodes: int) -> float:
    sl = solve_lift_slice(lambda x: x[..., 0], (-2.0, 2.0), nodes)
    exact = np.cosh(sl.x) / math.cosh(2.0) - 1.0
    assert sl.ok
    return float(np.max(np.abs(sl.values - exact)))


def test_cosh_oracle_and_order():
    # G'' - G = g' with G(+-2) = 0 and g = x gives G = cosh x / cosh 2 - 1
    assert cosh_error(2001) <= 1e-4
    errs = [cosh_error(n) for n in (101, 201, 401, 801)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), orders


def test_gradient_oracle():
    sl = solve_lift_slice(lambda x: x[..., 0], (-2.0, 2.0), 2001)
    assert np.max(np.abs(sl.gradient - np.sinh(sl.x) / math.cosh(2.0))) < 1e-4


@given(st.floats(-3, 3), st.integers(1, 4))
def test_linearity(alpha, k):
    O = (-1.5, 1.5)
    g1 = lambda x: np.sin(k * x[..., 0])
    g2 = lambda x: x[..., 0] ** 2
    a = solve_lift_slice(lambda x: alpha * g1(x) + g2(x), O, 301).values
    b = alpha * solve_lift_slice(g1, O, 301).values + solve_lift_slice(g2, O, 301).values
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_zero_field_gives_zero():
    sl = solve_lift_slice(lambda x: np.zeros(x.shape[:-1]), (-1, 1), 51)
    assert np.all(sl.values == 0) and sl.residual == 0


def test_errors():
    with pytest.raises(LiftError):
        solve_lift_slice(lambda x: x[..., 0], (-1, 1), 2)
    with pytest.raises(LiftError):
        solve_lift_slice(lambda x: x[..., 0], (1, -1), 11)
    with pytest.raises(LiftError):
        enclosing_interval(make_ball([0, 0], 1.0))
    with pytest.raises(ValueError):
        smooth_extension(lambda t, x: x, make_interval(-1, 1), (-2, 2), mode="wild")


def test_cutoff_smooth_and_monotone():
    s = np.linspace(-0.5, 1.5, 2001)
    c = smooth_cutoff(s, 1.0)
    assert c[0] == 1.0 and c[-1] == 0.0
    assert np.all(np.diff(c) <= 0)
    np.testing.assert_allclose(smooth_cutoff(np.array([0.5]), 1.0), 0.5)


def test_extension_agrees_on_domain_and_vanishes_near_ends():
    dom = make_interval(-1, 1)
    O = enclosing_interval(dom)
    g = lambda t, x: np.exp(x)
    nat = smooth_extension(g, dom, O, "natural")
    prj = smooth_extension(g, dom, O, "projected")
    inside = np.linspace(-1, 1, 21)[:, None]
    np.testing.assert_allclose(nat(0.0, inside), prj(0.0, inside))
    ends = np.array([[O[0]], [O[1]]])
    assert np.all(nat(0.0, ends) == 0) and np.all(prj(0.0, ends) == 0)


def test_two_extensions_differ_by_a_harmonic_function():
    # on the domain both extensions equal g, so D = G_nat - G_proj solves D'' = D there
    dom = make_interval(-1, 1)
    g = lambda t, x: x**3
    LA = solve_lift_spacetime(g, dom, 2401, [0.0], extension="natural")
    LB = solve_lift_spacetime(g, dom, 2401, [0.0], extension="projected")
    x = LA.o_grid
    D = LA.values[0] - LB.values[0]
    assert np.max(np.abs(D)) > 1e-3  # the lifts themselves differ
    h = x[1] - x[0]
    m = (x > -1 + 2 * h) & (x < 1 - 2 * h)
    i = np.nonzero(m)[0]
    lap = (D[i + 1] - 2 * D[i] + D[i - 1]) / h**2
    assert np.max(np.abs(lap - D[i])) < 1e-4 * max(1.0, np.max(np.abs(D)))


def test_separable_matches_numeric():
    p = get_preset("manufactured_gx")
    dom = make_interval(-1, 1)
    ts = np.linspace(0, 1, 41)
    A = solve_lift_spacetime(lambda t, x: p.coef.g(t, x), dom, 801, ts, separable=p.coef.separable)
    B = solve_lift_spacetime(lambda t, x: p.coef.g(t, x), dom, 801, ts)
    assert A.provenance.startswith("analytic") and B.provenance == "numeric"
    np.testing.assert_allclose(A.values, B.values, atol=1e-12)
    np.testing.assert_allclose(A.time_derivative, B.time_derivative, atol=1e-4)
    assert np.max(weak_residuals(B, lambda t, x: p.coef.g(t, x), dom)) < 1e-10


def test_eval_lift_range_and_values():
    dom = make_interval(-1, 1)
    L = solve_lift_spacetime(lambda t, x: (1 + t)[..., None] * x if np.ndim(t) else (1 + t) * x, dom, 401, [0.0, 1.0])
    G, dG, Gt = eval_lift(L, 0.5, 0.25)
    assert np.isfinite(G) and np.isfinite(dG)
    np.testing.assert_allclose(Gt, L.values[1, 200 + 25] - L.values[0, 200 + 25], rtol=1e-2)
    with pytest.raises(LiftError):
        eval_lift(L, 0.5, 5.0)
    with pytest.raises(LiftError):
        eval_lift(L, 2.0, 0.0)
    R = L.restricted(-1, 1)
    assert R.o_grid[0] == pytest.approx(-1) and R.o_grid[-1] == pytest.approx(1)
    assert set(L.bounds) == {"G", "grad", "dt"}


def test_zero_lift():
    L = solve_lift_spacetime(lambda t, x: x, make_interval(-1, 1), 11, [0, 1], zero=True)
    assert L.provenance == "zero" and not np.any(L.values)
