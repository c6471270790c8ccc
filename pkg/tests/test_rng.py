from __future__ import annotations

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from neumannlab.rng import BLOCK, PathStreams, batches, map_batches, mean_se


@given(st.integers(0, 3 * BLOCK), st.integers(1, 2 * BLOCK))
def test_draws_independent_of_batching(start, count):
    s = PathStreams(3, "x")
    full = s.normals(0, start + count, 4, 1)
    np.testing.assert_array_equal(s.normals(start, count, 4, 1), full[start:])


def test_tags_and_seeds_differ():
    a = PathStreams(1, "a").normals(0, 10, 5, 1)
    assert not np.array_equal(a, PathStreams(1, "b").normals(0, 10, 5, 1))
    assert not np.array_equal(a, PathStreams(2, "a").normals(0, 10, 5, 1))
    assert not np.array_equal(a, PathStreams(1, "a").child("c").normals(0, 10, 5, 1))
    np.testing.assert_array_equal(a, PathStreams(1, "a").normals(0, 10, 5, 1))


def test_uniforms_index_stable():
    s = PathStreams(4, "u")
    u = s.uniforms(0, 600, 1)
    np.testing.assert_array_equal(s.uniforms(300, 100, 1), u[300:400])
    assert 0.0 <= u.min() and u.max() < 1.0


@given(st.integers(0, 3 * BLOCK), st.integers(1, BLOCK))
def test_step_uniforms_index_stable(start, count):
    s = PathStreams(6, "su")
    full = s.step_uniforms(0, start + count, 7)
    np.testing.assert_array_equal(s.step_uniforms(start, count, 7), full[start:])
    assert full.min() >= 0.0 and full.max() < 1.0
    assert not np.array_equal(full[:, 0], s.uniforms(0, start + count, 1)[:, 0])


def test_map_batches_worker_invariance():
    s = PathStreams(5, "w")
    fn = lambda first, count: s.normals(first, count, 3, 1).sum(axis=(1, 2))
    one = map_batches(fn, 3000, 1, 512)
    np.testing.assert_array_equal(one, map_batches(fn, 3000, 4, 512))
    np.testing.assert_array_equal(one, map_batches(fn, 3000, 3, 256))
    assert sum(c for _, c in batches(3000, 512)) == 3000


def test_mean_se():
    v = np.arange(10.0)
    m, s = mean_se(v)
    assert m == 4.5
    np.testing.assert_allclose(s, np.std(v, ddof=1) / np.sqrt(10))
    m2, s2 = mean_se(np.ones((5, 3)))
    np.testing.assert_array_equal(m2, 1.0)
    np.testing.assert_array_equal(s2, 0.0)


def test_increment_moments():
    d = PathStreams(9, "m").increments(0, 20000, 10, 1, 0.01)
    assert abs(d.mean()) < 4 * 0.1 / np.sqrt(2e5)
    assert abs(d.var() / 0.01 - 1) < 0.02
