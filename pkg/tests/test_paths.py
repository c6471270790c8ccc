from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neumannlab.geometry import make_ball, make_interval
from neumannlab.paths import (
    PathError, local_time_exp_moment, local_times, penalization_gaps, quadratic_variation, simulate_coupled,
    simulate_penalized, simulate_reflected, star_expectation, star_integral, star_integral_terms,
)
from neumannlab.rng import PathStreams


def expected_local_time(T: float, x0: float = 0.0, width: float = 2.0, terms: int = 40) -> float:
    """E[L_T] for reflected BM on an interval, by images: int_0^T (p(s, a) + p(s, b)) / 2 ds."""
    from scipy.integrate import quad

    a, b = -width / 2, width / 2

    def wall(s, y):
        # density of the folded path at a wall counts both sides of each image
        return 2 * sum(math.exp(-((y - x0 + 2 * width * k) ** 2) / (2 * s)) for k in range(-terms, terms + 1)) / math.sqrt(2 * math.pi * s)

    return quad(lambda s: 0.5 * (wall(s, a) + wall(s, b)), 0.0, T, limit=200)[0]


def expected_exp_local_time(mu: float, T: float, nodes: int = 1001, steps: int = 2000) -> float:
    """E_0[exp(mu L_T)] on [-1, 1]: v_t = v''/2 with dv/dn = mu v, by lumped P1 and Crank-Nicolson."""
    from scipy.linalg import solve_banded

    x = np.linspace(-1.0, 1.0, nodes)
    h, dt = x[1] - x[0], T / steps
    mass = np.full(nodes, h)
    mass[[0, -1]] = h / 2
    A = np.zeros((3, nodes))
    A[1], A[0, 1:], A[2, :-1] = 1.0 / h, -0.5 / h, -0.5 / h
    A[1, 1:-1] = 1.0 / h
    A[1, [0, -1]] = 0.5 / h - 0.5 * mu
    lhs = 0.5 * dt * A
    lhs[1] += mass
    v = np.ones(nodes)
    for _ in range(steps):
        Av = A[1] * v
        Av[:-1] += A[0, 1:] * v[1:]
        Av[1:] += A[2, :-1] * v[:-1]
        v = solve_banded((1, 1), lhs, mass * v - 0.5 * dt * Av)
    return float(v[nodes // 2])


def test_exp_local_time_oracle_small_mu_limit():
    # d/dmu at 0 recovers E[L_T]
    assert (expected_exp_local_time(1e-4, 1.0) - 1.0) / 1e-4 == pytest.approx(expected_local_time(1.0), rel=1e-3)


def test_rejects_bad_inputs(interval):
    s = PathStreams(0)
    with pytest.raises(PathError):
        simulate_reflected(interval, None, 0.0, 0.0, 1.0, 0.0, s)
    with pytest.raises(PathError):
        simulate_reflected(interval, None, 0.0, 1.0, 1.0, 0.1, s)
    with pytest.raises(PathError):
        simulate_reflected(interval, None, 2.0, 0.0, 1.0, 0.1, s)
    with pytest.raises(PathError):
        simulate_penalized(interval, None, -1.0, 0.0, 0.0, 1.0, 0.1, s)
    with pytest.raises(PathError):
        simulate_reflected(interval, None, 0.0, 0.0, 1.0, 0.1, None)
    pen = simulate_penalized(interval, None, 1.0, 0.0, 0.0, 1.0, 0.1, s)
    with pytest.raises(PathError):
        pen.local_time()


@pytest.mark.parametrize("n,dt", [(10.0, 1e-3), (1000.0, 1e-2)])
def test_zero_noise_relaxation(interval, n, dt):
    # outside the closure with no noise, the gap decays like exp(-2 n t)
    b = simulate_penalized(interval, None, n, 2.0, 0.0, 0.2, dt, None, increments=np.zeros((1, round(0.2 / dt), 1)))
    gap = b.states[0, :, 0] - 1.0
    t = b.t_grid
    if n * dt > 0.5:
        np.testing.assert_allclose(gap, np.exp(-2 * n * t), rtol=1e-12, atol=1e-15)
    else:
        np.testing.assert_allclose(gap, (1 - 2 * n * dt) ** np.arange(t.size), rtol=1e-12)
    # K accounts for the whole displacement
    np.testing.assert_allclose(b.states[0, -1] - 2.0, b.push_process()[0, -1], atol=1e-14)


def test_escape_flag(interval):
    b = simulate_penalized(interval, None, 1.0, 5.0, 0.0, 0.1, 0.01, PathStreams(0), escape_radius=4.0)
    assert b.escaped
    assert not simulate_penalized(interval, None, 1.0, 0.0, 0.0, 0.1, 0.01, PathStreams(0)).escaped


@given(st.integers(0, 10_000), st.sampled_from(["interval", "disc"]))
def test_skorokhod_decomposition(seed, kind):
    dom = make_interval(-1, 1) if kind == "interval" else make_ball([0.0, 0.0], 0.7)
    x0 = np.zeros(dom.dimension)
    b = simulate_reflected(dom, None, x0, 0.0, 1.0, 1e-2, PathStreams(seed), paths=5)
    assert np.all(dom.interior_fn(b.states) >= -1e-12)
    assert np.all(b.local_time_increments >= 0)
    # X = x0 + B + K exactly, and L increases only where the path sits on the boundary
    B = np.cumsum(b.brownian_increments, axis=1)
    np.testing.assert_allclose(b.states[:, 1:] - x0, B + b.push_process()[:, 1:], atol=1e-12)
    on = b.local_time_increments > 0
    psi = dom.interior_fn(b.states[:, 1:])
    assert np.all(np.abs(psi[on]) < 1e-12)


def test_coupled_share_increments(interval):
    pen, ref = simulate_coupled(interval, None, 32.0, 0.0, 1.0, 1e-2, PathStreams(1), paths=4)
    np.testing.assert_array_equal(pen.brownian_increments, ref.brownian_increments)


def test_star_null_and_identity(interval):
    b = simulate_reflected(interval, None, 0.0, 0.0, 1.0, 1e-3, PathStreams(2), paths=200)
    null = star_integral(lambda t, x: np.full(x.shape, 3.5), b)
    assert np.max(np.abs(null)) <= 1e-12
    field = lambda t, x: np.sin(3 * x) + np.asarray(t)[..., None]
    fwd, bwd, bnd = star_integral_terms(field, b)
    np.testing.assert_allclose(star_integral(field, b), fwd + bwd + bnd, atol=1e-10)


def test_star_expectation_small(interval):
    e = star_expectation(lambda t, x: x, interval, 0.0, 1.0, 2e-3, 4000, PathStreams(3, "star"))
    assert abs(e.extrapolated_mean + 1.0) < 4 * e.extrapolated_se + 2e-3
    # the raw estimates are biased toward zero by the discrete local time
    assert e.coarse_mean > e.fine_mean > -1.0


def test_quadratic_variation(interval):
    b = simulate_reflected(interval, None, 0.0, 0.0, 1.0, 1e-3, PathStreams(4), paths=500)
    qv = quadratic_variation(lambda t, x: np.ones_like(x), b)
    assert abs(qv.mean() - 1.0) < 0.01


@pytest.mark.parametrize("T", [0.5, 2.0])
def test_local_time_mean_oracle(interval, T):
    exact = expected_local_time(T)
    L = local_times(interval, 0.0, T, 1e-3, 20000, PathStreams(5, "lt", ), workers=2, scheme="reflection")
    se = L.std(ddof=1) / math.sqrt(L.size)
    assert abs(L.mean() - exact) < 4 * se
    P = local_times(interval, 0.0, T, 1e-3, 20000, PathStreams(5, "lt"), workers=2)
    # projection pushes underestimate the local time by O(sqrt(dt))
    assert P.mean() < exact


def test_local_time_long_run_rate():
    # stationary rate of E[L] on an interval of width w is 1 / w
    assert expected_local_time(8.0) - expected_local_time(4.0) == pytest.approx(2.0, rel=1e-6)


def test_local_time_reflection_interval_only():
    with pytest.raises(PathError):
        local_times(make_ball([0, 0], 1.0), [0.0, 0.0], 1.0, 1e-2, 10, PathStreams(0), scheme="reflection")
    with pytest.raises(PathError):
        local_times(make_interval(-1, 1), 0.0, 1.0, 1e-2, 10, PathStreams(0), scheme="euler")


def test_exp_moment_overflow(interval):
    m = local_time_exp_moment(interval, 0.0, 1e5, 1.0, 1e-2, 300, PathStreams(6))
    assert m.overflow and math.isinf(m.mean)
    ok = local_time_exp_moment(interval, 0.0, 0.0, 1.0, 1e-2, 300, PathStreams(6))
    assert ok.mean == 1.0 and ok.se == 0.0


def test_penalization_gaps_decrease(interval):
    g = penalization_gaps(interval, [8, 32, 128], 0.0, 1.0, 1e-3, 2000, PathStreams(7, "gap"))
    assert np.all(np.diff(g.sup_dist_mean) < 0)
    assert np.all(np.diff(g.sup_push_mean) < 0)
    assert g.mean_local_time > 0


def test_extrapolation_weights_cancel_powers():
    from neumannlab.paths import extrapolation_weights
    h = np.array([1e-3, 5e-4, 2.5e-4])
    w = extrapolation_weights(h)
    assert w.sum() == pytest.approx(1.0)
    for j in (1, 2):
        assert abs(np.dot(w, h ** (0.5 * j))) < 1e-14
    # two levels reproduce the closed form
    w2 = extrapolation_weights([1e-3, 2.5e-4])
    np.testing.assert_allclose(w2, [-1.0, 2.0])
    # any series E0 + c1 sqrt(h) + c2 h is recovered exactly
    assert np.dot(w, -1 + 0.7 * np.sqrt(h) - 3 * h) == pytest.approx(-1.0, abs=1e-12)


def test_star_expectation_three_levels(interval):
    e = star_expectation(lambda t, x: x, interval, 0.0, 1.0, 4e-3, 2000, PathStreams(3, "star"), refine=2, levels=3)
    assert e.levels == 3 and len(e.level_means) == 3
    assert e.dt_fine == pytest.approx(1e-3)
    assert e.coarse_mean > e.level_means[1] > e.fine_mean > -1.0
    with pytest.raises(Exception):
        star_expectation(lambda t, x: x, interval, 0.0, 1.0, 4e-3, 10, PathStreams(3), levels=1)


def test_exact_scheme_local_time_has_no_step_bias(interval):
    # exact per-step pushes: even a coarse step reproduces E[L_T]
    L = local_times(interval, 0.0, 1.0, 1e-2, 40000, PathStreams(9, "ex"), scheme="exact")
    assert abs(L.mean() - expected_local_time(1.0)) < 4 * L.std(ddof=1) / math.sqrt(L.size)


def test_exp_moment_oracle(interval):
    exact = expected_exp_local_time(1.0, 1.0)
    m = local_time_exp_moment(interval, 0.0, 1.0, 1.0, 2e-3, 40000, PathStreams(9, "em"), scheme="exact")
    assert abs(m.mean - exact) < 4 * m.se
    # the conditional-mean local time is exact on average but smooths exp(L)
    r = local_time_exp_moment(interval, 0.0, 1.0, 1.0, 2e-2, 40000, PathStreams(9, "em"), scheme="reflection")
    assert r.mean < exact


def test_exact_scheme_needs_interval():
    from neumannlab.geometry import make_ball
    with pytest.raises(PathError):
        local_times(make_ball([0.0, 0.0], 1.0), [0.0, 0.0], 1.0, 1e-2, 10, PathStreams(1), scheme="exact")
