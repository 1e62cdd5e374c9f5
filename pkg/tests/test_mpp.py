import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bitemporal import (
    ExplosionError,
    IntensitySpec,
    MppHistory,
    PiecewiseConstant,
    count_transitions,
    evaluate_pdp,
    history_at,
    read_histories,
    simulate_batch,
    simulate_path,
    write_histories,
)

from conftest import five_state_spec


def test_history_at_truncates():
    h = MppHistory.from_jumps("a", [(0.5, "i1"), (1.2, "d")])
    assert history_at(h, 1.0).times == (0.5,)
    assert history_at(h, 0.0).events == ()
    assert history_at(h, 2.0).times == (0.5, 1.2)
    assert history_at(h, 1.2).times == (0.5, 1.2)


def test_evaluate_pdp_is_cadlag():
    h = MppHistory.from_jumps("a", [(0.5, "i1")])
    assert evaluate_pdp(h, 0.3).label == "a"
    mark = evaluate_pdp(h, 0.5)
    assert mark.label == "i1" and mark.last_jump_time == 0.5
    assert evaluate_pdp(h, 7.0).label == "i1"
    assert evaluate_pdp(h, 7.0).duration(7.0) == pytest.approx(6.5)


def test_count_transitions():
    assert count_transitions(MppHistory.from_jumps("a"), "a", "i1", 3.0) == 0
    h = MppHistory.from_jumps("a", [(0.4, "i1"), (0.6, "i2")])
    assert count_transitions(h, "i1", "i2", 0.5) == 0
    assert count_transitions(h, "i1", "i2", 0.6) == 1
    assert count_transitions(h, "a", "i1", 1.0) == 1


def test_history_rejects_bad_jump_times():
    with pytest.raises(ValueError):
        MppHistory.from_jumps("a", [(0.5, "i1"), (0.5, "d")])
    with pytest.raises(ValueError):
        MppHistory.from_jumps("a", [(0.0, "i1")])


def test_spec_validation():
    with pytest.raises(ValueError):
        IntensitySpec(("a", "d"), {("a", "d"): -0.1})
    with pytest.raises(ValueError):
        IntensitySpec(("a", "d"), {("a", "x"): 0.1})
    spec = IntensitySpec(("a", "d"), {("a", "d"): 0.0})
    assert spec.is_absorbing("a")


def test_zero_rates_give_empty_history():
    spec = IntensitySpec(("a", "d"), {})
    assert simulate_path(spec, "a", 50.0, seed=3).events == ()


def test_exponential_mean():
    spec = IntensitySpec(("a", "d"), {("a", "d"): 0.5})
    batch = simulate_batch(spec, "a", 100.0, seed=11, paths=np.arange(100_000))
    first = batch.times[batch.offsets[:-1]]
    assert abs(first.mean() - 2.0) <= 3 * 2.0 / np.sqrt(100_000)
    ks = stats.kstest(first, "expon", args=(0, 2.0))
    assert ks.pvalue > 0.001


def test_competing_risks_fraction():
    spec = IntensitySpec(("a", "i1", "i2"), {("a", "i1"): 0.1, ("a", "i2"): 0.3})
    batch = simulate_batch(spec, "a", 1000.0, seed=5, paths=np.arange(100_000))
    frac = np.mean(batch.labels[batch.offsets[:-1]] == spec.index("i2"))
    assert abs(frac - 0.75) <= 3 * np.sqrt(0.75 * 0.25 / 100_000)


def test_sojourn_ks_against_total_hazard():
    spec = five_state_spec()
    batch = simulate_batch(spec, "i1", 1e4, seed=2, paths=np.arange(100_000))
    first = batch.times[batch.offsets[:-1]]
    assert stats.kstest(first, "expon", args=(0, 1 / 0.22)).pvalue > 0.001


def test_piecewise_rates_follow_the_cumulative_hazard():
    rate = PiecewiseConstant((0.0, 1.0), (0.2, 1.0))
    spec = IntensitySpec(("a", "d"), {("a", "d"): rate})
    batch = simulate_batch(spec, "a", 50.0, seed=9, paths=np.arange(50_000))
    first = batch.times[batch.offsets[:-1]]
    hazard = np.where(first < 1.0, 0.2 * first, 0.2 + (first - 1.0))
    assert stats.kstest(hazard, "expon").pvalue > 0.001


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**40), st.floats(0.1, 30.0))
def test_histories_strictly_ordered_and_reproducible(seed, t):
    spec = five_state_spec(onset=(0.3, 0.4), rho=(1.0, 2.0))
    a = simulate_batch(spec, "a", 20.0, seed, np.arange(30))
    b = simulate_batch(spec, "a", 20.0, seed, np.arange(30))
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.labels, b.labels)
    for i in range(30):
        h = a.history(i)
        assert all(x < y for x, y in zip((0.0,) + h.times, h.times))
        assert evaluate_pdp(h, t) == evaluate_pdp(history_at(h, t), t)


def test_workers_do_not_change_paths():
    spec = five_state_spec()
    a = simulate_batch(spec, "a", 10.0, 123, np.arange(5000))
    b = simulate_batch(spec, "a", 10.0, 123, np.arange(5000), n_jobs=3)
    np.testing.assert_array_equal(a.offsets, b.offsets)
    np.testing.assert_array_equal(a.times, b.times)
    one = simulate_path(spec, "a", 10.0, 123, path=4321)
    assert one == a.history(4321)


def test_explosion_guard():
    spec = IntensitySpec(("x", "y"), {("x", "y"): 1e6, ("y", "x"): 1e6})
    with pytest.raises(ExplosionError):
        simulate_batch(spec, "x", 1.0, 0, np.arange(2), max_jumps=100)


def test_history_csv_round_trip():
    spec = five_state_spec(onset=(0.3, 0.4))
    batch = simulate_batch(spec, "a", 10.0, 1, np.arange(20))
    hist = {i: batch.history(i) for i in range(20) if batch.history(i).events}
    buf = io.StringIO()
    write_histories(hist.items(), buf)
    assert buf.getvalue().splitlines()[0] == "path_id,time,from_label,to_label"
    assert read_histories(io.StringIO(buf.getvalue())) == hist
