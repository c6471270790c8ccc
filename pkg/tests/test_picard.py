from __future__ import annotations

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from neumannlab.coefficients import AssumptionSet
from neumannlab.picard import PicardState, analytic_constants, contraction_constants, probabilistic_constants
from neumannlab.presets import get_preset


def test_zero_constants_give_zero_rate():
    c = contraction_constants(AssumptionSet(alpha=0.0, beta=0.0, gamma=0.0, trace_norm=1.2))
    assert c.analytic.feasible and c.analytic.rho == 0.0
    assert c.probabilistic.feasible and c.probabilistic.rho == 0.0
    assert c.probabilistic.delta == 0.0


def test_large_gamma_blocks_probabilistic_route():
    w = probabilistic_constants(AssumptionSet(alpha=0.1, beta=0.1, gamma=0.5, trace_norm=1.2))
    assert not w.feasible and "gamma" in w.binding


def test_trace_condition_blocks_analytic_route():
    w = analytic_constants(AssumptionSet(alpha=0.1, beta=1.0, gamma=0.1, trace_norm=1.2))
    assert not w.feasible


def test_preset_contracts():
    p = get_preset("nonlinear_small_gamma")
    c = contraction_constants(p.assumptions)
    assert c.analytic.feasible and c.analytic.rho < 1
    assert c.probabilistic.feasible and c.probabilistic.rho < 1
    assert c.probabilistic.lam > 0 and c.probabilistic.mu > 0


@given(st.floats(0, 0.3), st.floats(0, 0.3), st.floats(0, 0.3))
def test_witness_satisfies_its_own_inequalities(alpha, beta, gamma):
    asm = AssumptionSet(alpha=alpha, beta=beta, gamma=gamma, trace_norm=1.2)
    a = analytic_constants(asm)
    if a.feasible:
        tr2 = 1.44
        den = 1 - gamma * a.eps - beta * tr2 * a.eps1
        num = alpha * a.eps + gamma / a.eps + beta * tr2 / a.eps1
        assert den > 0 and a.theta > 0
        assert a.rho == pytest.approx(num / den) and a.rho < 1
    p = probabilistic_constants(asm)
    if p.feasible:
        s = alpha**2 / p.eps1 + gamma**2 / p.eps3
        assert s < 1 - p.eps3 + 1e-15
        assert p.rho == pytest.approx(s / (1 - p.eps3))


def test_state_records_ratios_and_alarm():
    s = PicardState()
    s.record(1.0)
    s.record(0.5, ratio_se=0.01)
    assert s.ratios == [None, 0.5]
    assert not s.non_contracting()
    s.record(1.0, ratio_se=0.01)
    s.record(2.0, ratio_se=0.01)
    assert s.non_contracting()
    recs = s.as_records()
    assert [r["k"] for r in recs] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        s.record(-1.0)


def test_state_ratio_within_noise_is_not_an_alarm():
    s = PicardState()
    for d, se in [(1.0, None), (1.02, 0.05), (1.03, 0.05)]:
        s.record(d, ratio_se=se)
    assert not s.non_contracting()


def test_zero_distance_ratios():
    s = PicardState()
    s.record(0.0)
    s.record(0.0)
    s.record(1.0)
    assert s.ratios == [None, 0.0, math.inf]
