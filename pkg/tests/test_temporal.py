import math

import pytest
from scipy.integrate import quad
from hypothesis import given, settings
from hypothesis import strategies as st

from bitemporal import UNBOUNDED, AccumulationFunction, PiecewiseConstant, TimeGrid, accumulate, discount_factor
from bitemporal.temporal import format_time, parse_time


def test_accumulate_examples():
    assert accumulate(AccumulationFunction.constant(0.0), 5.0) == 1.0
    assert accumulate(AccumulationFunction.constant(0.03), 10.0) == pytest.approx(1.349859, abs=1e-6)
    step = AccumulationFunction(PiecewiseConstant((0.0, 1.0), (0.02, 0.04)))
    assert accumulate(step, 2.0) == pytest.approx(1.061837, abs=1e-6)


def test_discount_factor_examples():
    k = AccumulationFunction.constant(0.03)
    assert discount_factor(k, 3.7, 3.7) == 1.0
    assert discount_factor(k, 0.0, 10.0) == pytest.approx(0.740818, abs=1e-6)
    assert discount_factor(AccumulationFunction.constant(0.05), 2.0, 1.0) == pytest.approx(1.051271, abs=1e-6)


def test_unbounded_time_rejected():
    k = AccumulationFunction.constant(0.03)
    with pytest.raises(ValueError, match="non-finite"):
        accumulate(k, UNBOUNDED)
    with pytest.raises(ValueError, match="non-finite"):
        discount_factor(k, 0.0, math.inf)


forces = st.lists(
    st.tuples(st.floats(0.01, 5.0), st.floats(-0.05, 0.1)), min_size=1, max_size=5
).map(lambda pieces: PiecewiseConstant.from_segments(
    [(0.0, pieces[0][1])] + [(sum(p[0] for p in pieces[: i + 1]), pieces[i + 1][1]) for i in range(len(pieces) - 1)]
))


@settings(max_examples=60, deadline=None)
@given(forces, st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_accumulation_properties(force, t, s):
    k = AccumulationFunction(force)
    assert accumulate(k, 0.0) == 1.0
    lhs = discount_factor(k, t, s) * accumulate(k, s)
    assert lhs == pytest.approx(accumulate(k, t), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 0.2), min_size=1, max_size=4), st.floats(0.0, 20.0), st.floats(0.0, 20.0))
def test_nonnegative_force_gives_monotone_accumulation(rates, t1, t2):
    force = PiecewiseConstant.from_segments([(float(i), r) for i, r in enumerate(rates)])
    k = AccumulationFunction(force)
    lo, hi = sorted((t1, t2))
    assert accumulate(k, lo) <= accumulate(k, hi)


def test_discounted_integral_matches_quadrature():
    k = AccumulationFunction(PiecewiseConstant((0.0, 2.0), (0.01, 0.05)))
    rate = PiecewiseConstant((0.0, 1.5), (2.0, -1.0))
    numeric, _ = quad(lambda v: rate(v) / k(v), 0.5, 4.0, points=[1.5, 2.0], epsabs=1e-13)
    assert k.discounted_integral(0.5, 4.0, rate) == pytest.approx(numeric, abs=1e-10)
    assert k.discounted_integral(0.0, math.inf, 1.0) == pytest.approx(
        (1 - math.exp(-0.02)) / 0.01 + math.exp(-0.02) / 0.05, rel=1e-12
    )


def test_piecewise_constant_canonical_form():
    f = PiecewiseConstant.from_segments([{"from": 0, "rate": 1.0}, {"from": 2, "rate": 1.0}, {"from": 3, "rate": 0.5}])
    assert f.breakpoints == (0.0, 3.0)
    assert f(2.999) == 1.0 and f(3.0) == 0.5
    assert f.integral(0.0, 4.0) == pytest.approx(3.5)
    g = f.shifted(1.0)
    assert g(0.5) == 0.0 and g(3.9) == 1.0 and g(4.0) == 0.5
    with pytest.raises(ValueError):
        PiecewiseConstant((1.0,), (1.0,))


def test_time_format_round_trip():
    assert format_time(UNBOUNDED) == "inf"
    assert parse_time("inf") is UNBOUNDED
    assert parse_time(format_time(1 / 3)) == 1 / 3
    with pytest.raises(ValueError):
        parse_time("nan")


def test_grid_parsing():
    g = TimeGrid.parse("0:10:21")
    assert len(g) == 21 and g.points[1] == 0.5 and g.points[-1] == 10.0
    with pytest.raises(ValueError):
        TimeGrid.parse("0:10")
    with pytest.raises(ValueError):
        TimeGrid((1.0, 0.5))
