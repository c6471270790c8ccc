from __future__ import annotations

import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neumannlab.coefficients import CoefficientSet
from neumannlab.fd import (
    FDConfig, FDStabilityError, default_test_bank, picard_solve_fd, solve_linear_fd, theta_norm_sq, weak_residual,
)
from neumannlab.geometry import make_ball, make_interval
from neumannlab.presets import get_preset

DOM = make_interval(-1.0, 1.0)


def max_err(u, coef):
    T, X = np.meshgrid(u.t_nodes, u.x_nodes, indexing="ij")
    return float(np.max(np.abs(u.values - coef.exact(T, X))))


def test_constant_exact_and_fast():
    c = get_preset("constant", c=2.5).coef
    t0 = time.perf_counter()
    u = solve_linear_fd(DOM, c, FDConfig())
    assert time.perf_counter() - t0 < 1.0
    assert max_err(u, c) <= 1e-12


@pytest.mark.parametrize("name", ["manufactured_g0", "manufactured_gx"])
def test_manufactured_accuracy(name):
    c = get_preset(name).coef
    u = solve_linear_fd(DOM, c, FDConfig(201, 401))
    assert max_err(u, c) <= 5e-3
    np.testing.assert_array_equal(u.values[-1], c.phi(u.x_nodes[:, None]))


@pytest.mark.parametrize("name", ["manufactured_g0", "manufactured_gx"])
def test_second_order(name):
    c = get_preset(name).coef
    errs = [max_err(solve_linear_fd(DOM, c, FDConfig(n, 2 * n - 1)), c) for n in (21, 41, 81)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), orders


def test_config_errors():
    c = get_preset("manufactured_g0").coef
    with pytest.raises(FDStabilityError):
        solve_linear_fd(DOM, c, FDConfig(201, 11, theta=0.0))
    solve_linear_fd(DOM, c, FDConfig(11, 201, theta=0.0))  # explicit and within the step limit
    with pytest.raises(ValueError):
        solve_linear_fd(DOM, c, FDConfig(2, 11))
    with pytest.raises(ValueError):
        solve_linear_fd(make_ball([0, 0], 1.0), c, FDConfig())
    with pytest.raises(ValueError):
        solve_linear_fd(DOM, get_preset("nonlinear_small_gamma").coef, FDConfig())


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_linearity(alpha, beta):
    def coef(a, b):
        return CoefficientSet(
            "lin",
            terminal=lambda x: a * np.cos(np.pi * x[..., 0]),
            reaction=lambda t, x, y, z: b * np.sin(x[..., 0]) + 0 * np.asarray(t),
            boundary_reaction=lambda t, x, y: b * np.ones(np.shape(x)[:-1]),
            divergence_field=lambda t, x, y, z: a * x,
        )
    cfg = FDConfig(41, 41)
    u1 = solve_linear_fd(DOM, coef(1.0, 0.0), cfg).values
    u2 = solve_linear_fd(DOM, coef(0.0, 1.0), cfg).values
    u = solve_linear_fd(DOM, coef(alpha, beta), cfg).values
    np.testing.assert_allclose(u, alpha * u1 + beta * u2, atol=1e-11)


def test_theta_norm():
    t = np.linspace(0, 1, 101)
    x = np.linspace(-1, 1, 51)
    v = np.full((t.size, x.size), 2.0)
    # int_0^1 e^{s} * 4 * 2 ds = 8 (e - 1)
    assert theta_norm_sq(v, x, t, 1.0) == pytest.approx(8 * (math.e - 1), rel=1e-4)
    assert theta_norm_sq(np.zeros_like(v), x, t, 1.0) == 0.0


def test_test_bank():
    bank = default_test_bank(1.0, -1.0, 1.0)
    assert len(bank) == 12
    assert len({name for name, *_ in bank}) == 12


@pytest.mark.parametrize("name", ["manufactured_g0", "manufactured_gx"])
def test_residual_detector(name):
    c = get_preset(name).coef
    u = solve_linear_fd(DOM, c, FDConfig(101, 201))
    r = weak_residual(u, c)
    err = max_err(u, c)
    assert r <= 10 * err
    bumped = u.with_values(u.values + 1e-2 * (1 - u.t_nodes[:, None]) * (1 + u.x_nodes[None, :] ** 2))
    assert weak_residual(bumped, c) >= 10 * r
    # the exact solution sampled on the grid is not a discrete solution but is close to one
    T, X = np.meshgrid(u.t_nodes, u.x_nodes, indexing="ij")
    assert weak_residual(u.with_values(c.exact(T, X)), c) < 10 * err


def test_picard_relaxation_fixed_point():
    c = get_preset("relaxation", c=1.5).coef
    u, st_ = picard_solve_fd(DOM, c, FDConfig(41, 81), 1e-10, 60)
    assert st_.converged and not st_.alarm
    assert np.max(np.abs(u.values - 1.5)) < 1e-8
    r = [x for x in st_.ratios if x is not None]
    assert max(r) < 1.0


def test_picard_tol_inf_single_step():
    p = get_preset("nonlinear_small_gamma")
    u, st_ = picard_solve_fd(DOM, p.coef, FDConfig(41, 81), math.inf, 10)
    assert st_.k == 1 and st_.ratios == [None]
    # one step from u = 0 equals the linear solve with coefficients frozen at zero
    frozen = p.coef.frozen(
        "zero", f=lambda t, x, y, z: p.coef.f(t, x, 0.0, np.zeros(np.shape(x))),
        g=lambda t, x, y, z: p.coef.g(t, x, 0.0, np.zeros(np.shape(x))),
        h=lambda t, x, y: p.coef.h(t, x, 0.0),
    )
    ref = solve_linear_fd(DOM, frozen, FDConfig(41, 81))
    np.testing.assert_allclose(u.values, ref.values, atol=1e-10)


def test_picard_contracts_on_small_gamma():
    p = get_preset("nonlinear_small_gamma")
    u, st_ = picard_solve_fd(DOM, p.coef, FDConfig(81, 161), 1e-9, 30, asm=p.assumptions)
    assert st_.converged and not st_.alarm
    assert all(r < 0.5 for r in st_.ratios[1:])


@pytest.mark.parametrize("name", ["manufactured_g0", "manufactured_gx"])
def test_residual_of_injected_exact_and_random_perturbation(name, rng):
    c = get_preset(name).coef
    u = solve_linear_fd(DOM, c, FDConfig())
    T, X = np.meshgrid(u.t_nodes, u.x_nodes, indexing="ij")
    exact = u.with_values(c.exact(T, X))
    base = weak_residual(exact, c)
    assert base <= 1e-3
    noisy = u.with_values(exact.values + 0.1 * rng.standard_normal(exact.values.shape))
    assert weak_residual(noisy, c) >= 10 * max(base, weak_residual(u, c))
