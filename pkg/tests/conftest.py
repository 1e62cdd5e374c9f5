from pathlib import Path

import pytest

from bitemporal import (
    AccumulationFunction,
    IntensitySpec,
    MppHistory,
    PaymentSpec,
    RevisionEvent,
    TransactionTimeline,
    load_config,
)

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "bitemporal" / "fixtures"


def five_state_spec(onset=(0.06, 0.09), mu_a=0.03, rho=(0.2, 0.4), mu_i=(0.02, 0.01), mu_r=0.03):
    rates = {
        ("a", "i1"): onset[0], ("a", "i2"): onset[1], ("a", "d"): mu_a,
        ("i1", "r"): rho[0], ("i2", "r"): rho[1],
        ("i1", "d"): mu_i[0], ("i2", "d"): mu_i[1],
        ("r", "d"): mu_r,
    }
    return IntensitySpec(("a", "i1", "i2", "r", "d"), rates)


def disability_payments(horizon=10.0, premium=-0.5, b1=2.0, b2=1.0, death=10.0):
    return PaymentSpec(
        ("a", "i1", "i2", "r", "d"),
        horizon,
        {"a": premium, "i1": b1, "i2": b2},
        transition_payments={("a", "d"): death} if death else {},
    )


def jessie_timeline():
    h1 = MppHistory.from_jumps("a", [(1 / 3, "i2")])
    h2 = MppHistory.from_jumps("a", [(1 / 3, "i1")])
    return TransactionTimeline("a", None, (RevisionEvent(1 / 3, "i2", h1), RevisionEvent(0.5, "i1", h2)))


def taylor_timeline():
    h = MppHistory.from_jumps("a", [(1 / 6, "i")])
    return TransactionTimeline("a", None, (RevisionEvent(1 / 3, "i", h),))


@pytest.fixture(scope="session")
def default_config():
    return load_config(FIXTURES / "default.json")


@pytest.fixture(scope="session")
def tmodel(default_config):
    return default_config.transaction_model()


@pytest.fixture(scope="session")
def payments(default_config):
    return default_config.payment_spec()


@pytest.fixture(scope="session")
def kappa(default_config):
    return default_config.kappa()


@pytest.fixture
def zero_kappa():
    return AccumulationFunction.constant(0.0)
