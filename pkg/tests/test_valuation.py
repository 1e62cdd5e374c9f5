import io
import itertools
import math

import numpy as np
import pytest

from bitemporal import (
    AccumulationFunction,
    CashFlowLedger,
    IntensitySpec,
    MppHistory,
    PaymentSpec,
    RevisionEvent,
    TransactionModel,
    TransactionTimeline,
    UnreachableConditioning,
    decompose_present_value,
    mc_reserve,
    origin_probabilities,
    pv_by_representation,
    rbns_reserve,
    statewise_reserve,
    valid_ledger,
    write_reserves,
)
from bitemporal.valuation import ReserveEstimate, TimelineValuation, present_value, reserve_table

from conftest import disability_payments, five_state_spec, jessie_timeline

STATES = ("a", "i1", "i2", "r", "d")


def _single(mu):
    return IntensitySpec(("i", "d"), {("i", "d"): mu})


def test_present_value_examples():
    zero = AccumulationFunction.constant(0.0)
    led = CashFlowLedger([(0.0, 1.0, 1.0)])
    assert present_value(led, zero, 1.0) == 0.0
    assert present_value(led, zero, 0.25) == pytest.approx(0.75)
    atom = CashFlowLedger((), [(0.5, 10.0, "transition")])
    assert present_value(atom, AccumulationFunction.constant(0.03), 0.4) == pytest.approx(9.970045, abs=1e-6)


def test_jessie_decomposition():
    spec = PaymentSpec(STATES, 1.0, {"i1": 2.0, "i2": 1.0})
    zero = AccumulationFunction.constant(0.0)
    tl = jessie_timeline()
    diff = pv_by_representation(tl, spec, zero, 0.45, "transaction") - pv_by_representation(tl, spec, zero, 0.45, "valid")
    assert diff == pytest.approx(0.116667, abs=1e-6)
    rep = decompose_present_value(tl, spec, zero, 0.45)
    assert rep.correction == pytest.approx(0.116667, abs=1e-6)
    assert abs(rep.residual) < 1e-14
    for t in (0.5, 0.8):
        assert pv_by_representation(tl, spec, zero, t, "transaction") == pytest.approx(
            present_value(valid_ledger(tl.finalized, spec), zero, t), abs=1e-14)


def test_no_misreporting_has_zero_correction():
    h = MppHistory.from_jumps("a", [(0.3, "i1")])
    tl = TransactionTimeline("a", None, (RevisionEvent(0.3, "i1", h),))
    rep = decompose_present_value(tl, disability_payments(), AccumulationFunction.constant(0.03), 0.6)
    assert rep.correction == 0.0 and rep.pv_transaction == pytest.approx(rep.pv_valid, abs=1e-14)


@pytest.mark.parametrize("r,mu,term", list(itertools.product((0.0, 0.03), (0.01, 0.05), (1.0, 10.0))))
def test_single_decrement_annuity(r, mu, term):
    spec = PaymentSpec(("i", "d"), 12.0, {"i": 1.0})
    t = 12.0 - term
    value = statewise_reserve(_single(mu), spec, AccumulationFunction.constant(r), "i", t)
    exact = (1 - math.exp(-(r + mu) * term)) / (r + mu)
    assert abs(value / exact - 1) <= 1e-6
    assert statewise_reserve(_single(mu), spec, AccumulationFunction.constant(r), "d", t) == 0.0


def test_closed_form_example_value():
    spec = PaymentSpec(("i", "d"), 10.0, {"i": 1.0})
    assert statewise_reserve(_single(0.02), spec, AccumulationFunction.constant(0.03), "i", 0.0) == pytest.approx(
        7.869387, abs=1e-6)


def test_reserve_errors():
    spec = PaymentSpec(("i", "d"), 10.0, {"i": 1.0}, duration_rates={"i": 1.0})
    with pytest.raises(ValueError, match="duration-dependent"):
        statewise_reserve(_single(0.02), spec, AccumulationFunction.constant(0.0), "i", 0.0)
    plain = PaymentSpec(("i", "d"), 10.0, {"i": 1.0})
    with pytest.raises(ValueError, match="horizon"):
        statewise_reserve(_single(0.02), plain, AccumulationFunction.constant(0.0), "i", 11.0)


def test_statewise_against_monte_carlo(tmodel, payments, kappa):
    vt = tmodel.valid_time_spec
    ode = statewise_reserve(vt, payments, kappa, "a", 0.0)
    est = mc_reserve(vt, payments, kappa, "a", 0.0, n=1_000_000, seed=99)
    assert abs(ode - est.value) <= 3 * est.std_error


def test_benefits_only_reserve_is_nonnegative(tmodel, kappa):
    spec = disability_payments(premium=0.0)
    table = reserve_table(tmodel.valid_time_spec, spec, kappa)
    assert np.all(table.values_at(np.linspace(0, 10, 101)) >= -1e-12)


def test_mc_deterministic_annuity():
    spec = PaymentSpec(("a", "d"), 5.0, {"a": 1.0})
    est = mc_reserve(IntensitySpec(("a", "d"), {}), spec, AccumulationFunction.constant(0.0), "a", 1.5, n=100, seed=1)
    assert est.value == pytest.approx(3.5, abs=1e-12) and est.std_error == 0.0 and est.n_paths == 100


def test_mc_std_error_scales_with_root_n(tmodel, payments, kappa):
    vt = tmodel.valid_time_spec
    small = mc_reserve(vt, payments, kappa, "a", 0.0, n=100_000, seed=1)
    large = mc_reserve(vt, payments, kappa, "a", 0.0, n=200_000, seed=2)
    assert small.std_error / large.std_error == pytest.approx(math.sqrt(2), rel=0.1)


def test_unreachable_conditioning():
    spec = PaymentSpec(("a", "d"), 5.0, {"a": 1.0})
    model = IntensitySpec(("a", "d"), {("a", "d"): 50.0})
    with pytest.raises(UnreachableConditioning, match="unreachable"):
        mc_reserve(model, spec, AccumulationFunction.constant(0.0), "a", 4.0, n=50, seed=0, mode="reject")


def _observed(z="i2", onset=1.0):
    h = MppHistory.from_jumps("a", [(onset, z)])
    return TransactionTimeline("a", None, (RevisionEvent(onset, z, h),))


def test_reserve_collapse_under_symmetry():
    spec = disability_payments(b1=1.5, b2=1.5)
    tm = TransactionModel.from_intensities(
        five_state_spec(onset=(0.05, 0.05), rho=(0.3, 0.3), mu_i=(0.02, 0.02)), (0.5, 0.5), 10.0)
    k = AccumulationFunction.constant(0.03)
    value = rbns_reserve(tm, spec, k, _observed(), 1.25).value
    assert abs(value - statewise_reserve(tm.valid_time_spec, spec, k, "i1", 1.25)) <= 1e-8


def test_equal_rates_give_weighted_average(tmodel, kappa):
    spec = disability_payments(b1=1.5, b2=1.5)
    p = origin_probabilities(tmodel, "i2", 1.0, 1.25)
    assert sum(p) == pytest.approx(1.0, abs=1e-15)
    vt = tmodel.valid_time_spec
    expected = sum(pk * statewise_reserve(vt, spec, kappa, s, 1.25) for pk, s in zip(p, ("i1", "i2")))
    assert rbns_reserve(tmodel, spec, kappa, _observed(), 1.25).value == pytest.approx(expected, abs=1e-12)


def test_rbns_outside_disability_is_statewise(tmodel, payments, kappa):
    active = TransactionTimeline("a")
    assert rbns_reserve(tmodel, payments, kappa, active, 2.0).value == pytest.approx(
        statewise_reserve(tmodel.valid_time_spec, payments, kappa, "a", 2.0))


def test_rbns_against_restart_monte_carlo(tmodel, payments, kappa):
    formula = rbns_reserve(tmodel, payments, kappa, _observed(), 1.25).value
    est = mc_reserve(tmodel, payments, kappa, _observed(), 1.25, n=100_000, seed=17)
    assert abs(formula - est.value) <= 3 * est.std_error


def test_rbns_needs_conditional_independence():
    tm = TransactionModel.from_intensities(five_state_spec(), (0.5, 0.5), 10.0, conditional_independence=False)
    with pytest.raises(ValueError, match="conditional-independence"):
        rbns_reserve(tm, disability_payments(), AccumulationFunction.constant(0.0), _observed(), 1.25)


def test_write_reserves():
    buf = io.StringIO()
    write_reserves([(0.5, ReserveEstimate(1.25, "formula"))], buf)
    assert buf.getvalue() == "t,method,value,std_error,n_paths\n0.5,formula,1.25,0.0,0\n"
    with pytest.raises(ValueError):
        ReserveEstimate(1.0, "guess")


def test_valuation_identities_on_random_timelines(tmodel, payments, kappa):
    grid = np.linspace(0.0, 10.0, 20)
    for tl in tmodel.simulate_timelines(seed=2, n=200):
        tv = TimelineValuation(tl, payments, kappa)
        for t in grid:
            rep = tv.report(t)
            assert abs(rep.residual) <= 1e-9
            assert abs(rep.pv_transaction - tv.representation(t, "transaction")) <= 1e-9
            assert abs(rep.correction - rep.correction_telescoped) <= 1e-10
