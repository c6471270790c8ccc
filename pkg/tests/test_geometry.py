from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neumannlab.geometry import BALL, INTERVAL, domain_from_config, geometry_selfcheck, make_ball, make_interval

coords = st.floats(-10, 10, allow_nan=False)


def test_interval_closed_forms():
    dom = make_interval(-1.0, 3.0)
    assert dom.kind == INTERVAL and dom.dimension == 1
    np.testing.assert_allclose(dom.interior_fn([1.0]), 1.0)
    np.testing.assert_allclose(dom.interior_fn([[-1.0], [3.0]]), 0.0)
    np.testing.assert_allclose(dom.boundary_normal([[-1.0], [3.0]])[:, 0], [1.0, -1.0])
    np.testing.assert_allclose(dom.penal_field([[4.0], [-3.0], [0.0]])[:, 0], [2.0, -4.0, 0.0])
    assert dom.diameter == 4.0


def test_ball_projection_and_normal():
    dom = make_ball([1.0, -1.0], 2.0)
    assert dom.kind == BALL and dom.dimension == 2
    p = dom.projection([[5.0, -1.0]])
    np.testing.assert_allclose(p, [[3.0, -1.0]])
    np.testing.assert_allclose(dom.boundary_normal(p), [[-1.0, 0.0]])
    np.testing.assert_allclose(dom.dist_sq([[5.0, -1.0]]), 4.0)


@pytest.mark.parametrize("dom", [make_interval(-1, 1), make_interval(0.5, 2.0), make_ball([0, 0], 1.0), make_ball([1, 2, 3], 0.5)])
def test_selfcheck_clean(dom):
    rep = geometry_selfcheck(dom, 3000, 0)
    assert rep.ok, rep.max_violation


def test_bad_domains():
    with pytest.raises(ValueError):
        make_interval(1.0, 1.0)
    with pytest.raises(ValueError):
        make_ball([0.0], -1.0)
    with pytest.raises(ValueError):
        domain_from_config("torus", [1.0])
    with pytest.raises(ValueError):
        domain_from_config("interval", [1.0])
    with pytest.raises(ValueError):
        geometry_selfcheck(make_interval(0, 1), 0, 0)


def test_config_ball_order():
    dom = domain_from_config("ball", [1.0, 2.0, 0.5])
    np.testing.assert_allclose(dom.projection([[1.0, 5.0]]), [[1.0, 2.5]])


@given(st.lists(coords, min_size=2, max_size=2))
def test_ball_invariants(p):
    dom = make_ball([0.3, -0.2], 1.5)
    x = np.array([p])
    proj = dom.projection(x)
    # projection is idempotent, lies in the closure and delta pairs nonpositively with the normal
    np.testing.assert_allclose(dom.projection(proj), proj, atol=1e-12)
    assert dom.contains(proj + 0.0, closed=True) or np.isclose(np.linalg.norm(proj - [0.3, -0.2]), 1.5)
    assert np.sum(dom.interior_grad(x) * dom.penal_field(x)) <= 1e-12
    assert (dom.penal_field(x) == 0).all() == bool(dom.contains(x)[0])


@given(coords)
def test_interval_psi_sign(x):
    dom = make_interval(-1.0, 2.0)
    psi = float(dom.interior_fn([x])[()] if np.ndim(dom.interior_fn([x])) == 0 else dom.interior_fn([x])[0])
    assert (psi > 0) == bool(dom.contains([x], closed=False)) or abs(psi) < 1e-12
