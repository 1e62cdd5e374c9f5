"""Bi-temporal multi-state modelling of insurance liabilities.

Valid-time histories, transaction-time revision timelines, cash flows with
backpay, reserves (ODE, explicit RBNS formula and Monte Carlo) and
martingale residual back-tests.
"""

from .bitemporal import (
    BitemporalRecord,
    RevisionEvent,
    TimelineError,
    TransactionTimeline,
    ValidationReport,
    Violation,
    absorption_time,
    as_of,
    export_records,
    import_records,
    read_records,
    validate_assumptions,
    write_records,
)
from .cashflow import (
    CashFlowLedger,
    Interval,
    PaymentSpec,
    backpay_at,
    discounted_value,
    read_ledger,
    transaction_ledger,
    valid_ledger,
    write_ledger,
)
from .config import ConfigError, RunConfig, check_config, load_config
from .dynamics import (
    BacktestReport,
    ResidualPath,
    SumsAtRisk,
    backtest_residuals,
    reconstruct_valid_reserve,
    residual_path,
    sums_at_risk_markov,
    write_backtest,
)
from .mpp import (
    ExplosionError,
    IntensitySpec,
    Mark,
    MppHistory,
    PathBatch,
    count_transitions,
    evaluate_pdp,
    history_at,
    read_histories,
    simulate_batch,
    simulate_path,
    write_histories,
)
from .temporal import (
    UNBOUNDED,
    AccumulationFunction,
    ForceOfInterest,
    PiecewiseConstant,
    TimeGrid,
    accumulate,
    discount_factor,
)
from .transaction import TransactionModel
from .valuation import (
    PresentValueReport,
    ReserveEstimate,
    TimelineValuation,
    UnreachableConditioning,
    decompose_present_value,
    mc_reserve,
    origin_probabilities,
    pv_by_representation,
    rbns_reserve,
    statewise_reserve,
    write_reserves,
)

__version__ = "0.1.0"

__all__ = [
    "absorption_time",
    "accumulate",
    "AccumulationFunction",
    "as_of",
    "backpay_at",
    "backtest_residuals",
    "BacktestReport",
    "BitemporalRecord",
    "CashFlowLedger",
    "check_config",
    "ConfigError",
    "count_transitions",
    "decompose_present_value",
    "discount_factor",
    "discounted_value",
    "evaluate_pdp",
    "ExplosionError",
    "export_records",
    "ForceOfInterest",
    "history_at",
    "import_records",
    "IntensitySpec",
    "Interval",
    "load_config",
    "Mark",
    "mc_reserve",
    "MppHistory",
    "origin_probabilities",
    "PathBatch",
    "PaymentSpec",
    "PiecewiseConstant",
    "PresentValueReport",
    "pv_by_representation",
    "rbns_reserve",
    "read_histories",
    "read_ledger",
    "read_records",
    "reconstruct_valid_reserve",
    "ReserveEstimate",
    "residual_path",
    "ResidualPath",
    "RevisionEvent",
    "RunConfig",
    "simulate_batch",
    "simulate_path",
    "statewise_reserve",
    "sums_at_risk_markov",
    "SumsAtRisk",
    "TimeGrid",
    "TimelineError",
    "TimelineValuation",
    "transaction_ledger",
    "TransactionModel",
    "TransactionTimeline",
    "UNBOUNDED",
    "UnreachableConditioning",
    "valid_ledger",
    "validate_assumptions",
    "ValidationReport",
    "Violation",
    "write_backtest",
    "write_histories",
    "write_ledger",
    "write_records",
    "write_reserves",
]
