from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from bwlocksim.contention import calibrate_alpha, consumed_bytes, gpu_slowdown_factor, time_to_exhaust
from bwlocksim.model import ContentionMode, ContentionParams

fracs = st.fractions(min_value=0, max_value=10**7, max_denominator=1000)


def test_worked_example_exhausts_at_a_third():
    t, idle = time_to_exhaust(Fraction(300000), 100000, Fraction(1))
    assert (t, idle) == (Fraction(1, 3), Fraction(2, 3))


def test_low_demand_never_throttles():
    assert time_to_exhaust(Fraction(10000), 100000, Fraction(1)) == (1, 0)
    assert time_to_exhaust(Fraction(0), 100000, Fraction(1)) == (1, 0)


def test_exact_boundary_counts_as_unthrottled():
    assert time_to_exhaust(Fraction(100000), 100000, Fraction(1)) == (1, 0)


@given(fracs, st.integers(1, 10**6), st.fractions(min_value=Fraction(1, 10), max_value=5))
def test_exhaust_split_covers_period(r, q, T):
    t, idle = time_to_exhaust(r, q, T)
    assert t + idle == T
    assert 0 <= idle < T
    assert consumed_bytes(r, t, q) <= q


def test_consumption_capped_by_budget():
    assert consumed_bytes(Fraction(300000), Fraction(1), 100000) == 100000
    assert consumed_bytes(Fraction(300000), Fraction(1, 10), 100000) == 30000


def test_slowdown_modes():
    lin = ContentionParams(ContentionMode.LINEAR, Fraction(2), Fraction(1000))
    assert gpu_slowdown_factor(0, lin) == 1
    assert gpu_slowdown_factor(500, lin) == 2
    assert gpu_slowdown_factor(500, ContentionParams(ContentionMode.NONE)) == 1


@given(fracs, fracs)
def test_slowdown_monotone(a, b):
    p = ContentionParams(ContentionMode.LINEAR, Fraction(23, 10), Fraction(3 * 10**6))
    lo, hi = sorted((a, b))
    assert 1 <= gpu_slowdown_factor(lo, p) <= gpu_slowdown_factor(hi, p)


def test_calibration_hits_target():
    rates = [Fraction(10**6)] * 3
    alpha = calibrate_alpha(Fraction("3.3"), rates, Fraction(3 * 10**6))
    assert alpha == Fraction("2.3")
    p = ContentionParams(ContentionMode.LINEAR, alpha, Fraction(3 * 10**6))
    assert gpu_slowdown_factor(sum(rates), p) == Fraction("3.3")
    with pytest.raises(ValueError):
        calibrate_alpha(2, [0], 1)


@given(fracs, fracs, st.integers(1, 10**6), st.integers(1, 10**6))
def test_idle_remainder_monotone(r1, r2, q1, q2):
    T = Fraction(1)
    lo, hi = sorted((r1, r2))
    assert time_to_exhaust(lo, q1, T)[1] <= time_to_exhaust(hi, q1, T)[1]
    qa, qb = sorted((q1, q2))
    assert time_to_exhaust(r1, qb, T)[1] <= time_to_exhaust(r1, qa, T)[1]


def test_zero_budget_consumes_nothing():
    assert consumed_bytes(Fraction(300000), Fraction(1), 0) == 0
