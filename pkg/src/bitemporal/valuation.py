"""Present values, their pathwise representations, state-wise reserves and Monte Carlo reserves."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bitemporal import TransactionTimeline
from .cashflow import CashFlowLedger, DiscountedCumulative, Interval, PaymentSpec, transaction_ledger, valid_ledger
from .mpp import IntensitySpec, MppHistory, simulate_batch
from .ode import DEFAULT_STEP, BackwardSolution, augment, time_nodes
from .rng import STREAM_SETTLEMENT, uniforms
from .temporal import AccumulationFunction, format_time
from .transaction import DISABLED, EXTENDED, LABELS, TransactionModel

METHODS = ("closed_form", "ode", "monte_carlo", "formula")


class UnreachableConditioning(RuntimeError):
    pass


@dataclass(frozen=True)
class PresentValueReport:
    t: float
    pv_valid: float
    pv_transaction: float
    correction: float
    correction_telescoped: float

    @property
    def residual(self) -> float:
        return self.pv_transaction - self.pv_valid - self.correction


@dataclass(frozen=True)
class ReserveEstimate:
    value: float
    method: str
    std_error: float = 0.0
    n_paths: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")


def present_value(ledger: CashFlowLedger, kappa: AccumulationFunction, t: float) -> float:
    return kappa.accumulate(t) * ledger.discounted_value(kappa, Interval.prospective(t))


class TimelineValuation:
    """Present values along one timeline, with the ledgers of each believed history cached."""

    def __init__(self, tl: TransactionTimeline, spec: PaymentSpec, kappa: AccumulationFunction):
        self.tl, self.spec, self.kappa = tl, spec, kappa
        self.histories = [tl.initial_history] + [r.revised_history for r in tl.revisions]
        self.ledgers = [valid_ledger(h, spec) for h in self.histories]
        self.final = self.ledgers[-1]
        self._tledger = None

    @property
    def transaction_ledger(self) -> CashFlowLedger:
        if self._tledger is None:
            self._tledger = transaction_ledger(self.tl, self.spec, self.kappa)
        return self._tledger

    def _upto(self, n: int, t: float) -> float:
        return self.ledgers[n].discounted_value(self.kappa, Interval(0.0, t))

    def _believed(self, t: float) -> int:
        return self.tl._index(t) + 1

    def pv_valid(self, t: float) -> float:
        return present_value(self.final, self.kappa, t)

    def pv_transaction(self, t: float) -> float:
        return present_value(self.transaction_ledger, self.kappa, t)

    def representation(self, t: float, which: str) -> float:
        total = self.final.discounted_value(self.kappa)
        n = len(self.ledgers) - 1 if which == "valid" else self._believed(t)
        if which not in ("valid", "transaction"):
            raise ValueError("which must be 'valid' or 'transaction'")
        return self.kappa.accumulate(t) * (total - self._upto(n, t))

    def correction(self, t: float) -> float:
        last = len(self.ledgers) - 1
        return self.kappa.accumulate(t) * (self._upto(last, t) - self._upto(self._believed(t), t))

    def correction_telescoped(self, t: float) -> float:
        total = 0.0
        for n, rev in enumerate(self.tl.revisions, start=1):
            if rev.time > t:
                total += self._upto(n, t) - self._upto(n - 1, t)
        return self.kappa.accumulate(t) * total

    def report(self, t: float) -> PresentValueReport:
        return PresentValueReport(t, self.pv_valid(t), self.pv_transaction(t), self.correction(t), self.correction_telescoped(t))


def pv_by_representation(tl, spec, kappa, t, which="transaction") -> float:
    return TimelineValuation(tl, spec, kappa).representation(t, which)


def decompose_present_value(tl, spec, kappa, t) -> PresentValueReport:
    return TimelineValuation(tl, spec, kappa).report(t)


# ---------------------------------------------------------------- state-wise reserves
class StatewiseReserveTable:
    """Thiele solution ``V_j(t)`` on a fine grid; values between nodes by a partial RK4 step."""

    def __init__(self, model: IntensitySpec, spec: PaymentSpec, kappa: AccumulationFunction,
                 step: float = DEFAULT_STEP, terminal=None):
        if spec.duration_dependent:
            raise ValueError("duration-dependent payments unsupported")
        self.model, self.spec, self.kappa = model, spec, kappa
        self.states = model.states
        T = spec.horizon
        c = model.compiled
        extra = set(c.breakpoints.tolist()) | set(spec.breakpoints()) | set(kappa.force.breakpoints)
        nodes = time_nodes(T, step, sorted(extra))
        mid = 0.5 * (nodes[:-1] + nodes[1:])
        idx = np.searchsorted(c.breakpoints, mid, side="right") - 1
        rates = c.rates[idx]
        J = len(self.states)
        q = rates.copy()
        q[:, np.arange(J), np.arange(J)] = -c.totals[idx]
        r = kappa.force.at(mid)
        forcing = np.stack([spec.rate(j).at(mid) for j in self.states], axis=1)
        for (j, k), f in spec.transition_payments.items():
            if j in self.states and k in self.states:
                a, b = model.index(j), model.index(k)
                forcing[:, a] += rates[:, a, b] * f.at(mid)
        a_mat = r[:, None, None] * np.eye(J) - q
        atoms = {}
        for j, lst in spec.sojourn_atoms.items():
            if j not in self.states:
                continue
            for u, x in lst:
                if u <= T:
                    i = int(np.searchsorted(nodes, u))
                    atoms.setdefault(i, np.zeros(J))[model.index(j)] += x
        self.solution = BackwardSolution(nodes, augment(a_mat, forcing),
                                         np.zeros(J) if terminal is None else terminal, atoms)
        self.step_rates = rates
        self.step_force = r

    @property
    def nodes(self) -> np.ndarray:
        return self.solution.nodes

    def values_at(self, t):
        return self.solution.values_at(t)

    def value(self, j: str, t: float, u: float | None = None) -> float:
        """``V_j(t, u)``; the duration ``u`` is accepted for interface symmetry and ignored."""
        if t > self.spec.horizon:
            raise ValueError("t beyond the contract horizon")
        return float(self.values_at(t)[self.model.index(j)])


@lru_cache(maxsize=32)
def reserve_table(model: IntensitySpec, spec: PaymentSpec, kappa: AccumulationFunction,
                  step: float = DEFAULT_STEP) -> StatewiseReserveTable:
    return StatewiseReserveTable(model, spec, kappa, step)


def statewise_reserve(model: IntensitySpec, spec: PaymentSpec, kappa: AccumulationFunction, j: str, t: float,
                      u: float | None = None) -> float:
    if spec.duration_dependent:
        raise ValueError("duration-dependent payments unsupported")
    if t > spec.horizon:
        raise ValueError("t beyond the contract horizon")
    return reserve_table(model, spec, kappa).value(j, t, u)


def origin_probabilities(tmodel: TransactionModel, z_now: str, onset: float, t: float) -> tuple[float, float]:
    if onset > t:
        raise ValueError("onset after the evaluation time")
    return tmodel.origin_probabilities(z_now, t)


def _disabled_onset(h: MppHistory) -> int:
    for n in range(len(h.events) - 1, -1, -1):
        if h.events[n][1].label in DISABLED:
            return n
    raise ValueError("no disability onset in the carried history")


def origin_corrections(tl: TransactionTimeline, spec: PaymentSpec, kappa: AccumulationFunction, t: float) -> dict:
    """``kappa(t) (B°(history relabelled to i_k)[0,t] - B°(believed history)[0,t])`` for k = i1, i2."""
    h = tl.as_of(t, t)
    n = _disabled_onset(h)
    window = Interval(0.0, t)
    base = valid_ledger(h, spec).discounted_value(kappa, window)
    k_t = kappa.accumulate(t)
    return {lab: k_t * (valid_ledger(h.relabel(n, lab), spec).discounted_value(kappa, window) - base) for lab in DISABLED}


def rbns_reserve(tmodel: TransactionModel, spec: PaymentSpec, kappa: AccumulationFunction,
                 observed: TransactionTimeline, t: float) -> ReserveEstimate:
    """Transaction-time reserve from origin probabilities and state-wise reserves."""
    if not tmodel.conditional_independence:
        raise ValueError("the explicit RBNS formula requires the conditional-independence model")
    table = reserve_table(tmodel.valid_time_spec, spec, kappa, tmodel.step)
    z = observed.z_at(t)
    if z not in DISABLED:
        return ReserveEstimate(table.value(z, t), "formula")
    p = origin_probabilities(tmodel, z, observed.carried(t).events[_disabled_onset(observed.carried(t))][0], t)
    corr = origin_corrections(observed, spec, kappa, t)
    v = table.values_at(t)
    value = sum(pk * (v[table.model.index(lab)] + corr[lab]) for pk, lab in zip(p, DISABLED))
    return ReserveEstimate(float(value), "formula")


# ---------------------------------------------------------------- Monte Carlo
class FuturePayments:
    """Vectorised discounted value, at ``t``, of payments strictly after ``t`` along simulated paths."""

    def __init__(self, spec: PaymentSpec, kappa: AccumulationFunction, states: tuple):
        if spec.duration_dependent:
            raise ValueError("duration-dependent payments unsupported")
        self.spec, self.kappa, self.states = spec, kappa, states
        self.rate_cum = [DiscountedCumulative(spec.rate(j), kappa) for j in states]
        self.atoms = []
        for j in states:
            lst = [(u, x) for u, x in spec.atoms(j) if u <= spec.horizon]
            times = np.array([u for u, _ in lst])
            disc = np.array([x / kappa.accumulate(u) for u, x in lst])
            self.atoms.append((times, np.concatenate(([0.0], np.cumsum(disc)))))
        self.trans = [(states.index(j), states.index(k), f) for (j, k), f in spec.transition_payments.items()
                      if j in states and k in states]

    def __call__(self, t: float, init: np.ndarray, offsets: np.ndarray, times: np.ndarray, labels: np.ndarray):
        T = self.spec.horizon
        P = len(init)
        counts = np.diff(offsets)
        starts = np.insert(times, offsets[:-1], t)
        seg_state = np.insert(labels, offsets[:-1], init)
        last = offsets[1:] + np.arange(P)
        first = offsets[:-1] + np.arange(P)
        ends = np.append(starts[1:], np.inf)
        ends[last] = np.inf
        seg_path = np.repeat(np.arange(P), counts + 1)
        is_first = np.zeros(len(starts), dtype=bool)
        is_first[first] = True
        lo = np.minimum(starts, T)
        hi = np.minimum(ends, T)
        value = np.zeros(len(starts))
        for j in np.unique(seg_state):
            m = seg_state == j
            value[m] = self.rate_cum[j](hi[m]) - self.rate_cum[j](lo[m])
            at_t, at_cum = self.atoms[j]
            if len(at_t):
                upper = np.where(ends[m] > T, np.searchsorted(at_t, T, "right"), np.searchsorted(at_t, ends[m], "left"))
                lower = np.where(is_first[m], np.searchsorted(at_t, starts[m], "right"), np.searchsorted(at_t, starts[m], "left"))
                value[m] += np.where(upper > lower, at_cum[upper] - at_cum[np.minimum(lower, upper)], 0.0)
        out = np.bincount(seg_path, weights=value, minlength=P)
        if self.trans and len(times):
            ev_path = np.repeat(np.arange(P), counts)
            prev = seg_state[np.delete(np.arange(len(starts)), last)]
            for a, b, f in self.trans:
                m = (prev == a) & (labels == b) & (times <= T)
                if np.any(m):
                    amount = f.at(times[m]) * np.exp(-np.asarray(self.kappa.log_accumulate(times[m])))
                    out += np.bincount(ev_path[m], weights=amount, minlength=P)
        return self.kappa.accumulate(t) * out


def _estimate(values: np.ndarray) -> ReserveEstimate:
    n = len(values)
    if n == 0:
        raise UnreachableConditioning("conditioning event unreachable")
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return ReserveEstimate(float(values.mean()), "monte_carlo", se, n)


def mc_reserve(model, spec: PaymentSpec, kappa: AccumulationFunction, conditioning, t: float, n: int, seed: int,
               mode: str = "restart", n_jobs: int = 1, return_samples: bool = False):
    """Monte Carlo reserve at ``t``.

    ``model`` is an ``IntensitySpec`` (valid time; ``conditioning`` is the
    current state label or the observed history) or a ``TransactionModel``
    (transaction time; ``conditioning`` is the observed timeline). ``mode`` is
    ``"restart"`` (start from the current state at ``t``) or ``"reject"``
    (start at the last observed jump and keep paths without a jump up to ``t``).
    """
    if mode not in ("restart", "reject"):
        raise ValueError("mode must be 'restart' or 'reject'")
    if isinstance(model, TransactionModel):
        samples = _transaction_samples(model, spec, kappa, conditioning, t, n, seed, mode, n_jobs)
    else:
        samples = _valid_samples(model, spec, kappa, conditioning, t, n, seed, mode, n_jobs)
    est = _estimate(samples)
    return (est, samples) if return_samples else est


def _accepted(batch, t):
    """Paths with no jump in (start, t], and their remaining events."""
    counts = np.diff(batch.offsets)
    first_time = np.full(len(counts), np.inf)
    has = counts > 0
    first_time[has] = batch.times[batch.offsets[:-1][has]]
    keep = first_time > t
    idx = np.nonzero(keep)[0]
    sel = keep[np.repeat(np.arange(len(counts)), counts)]
    offsets = np.concatenate(([0], np.cumsum(counts[idx])))
    return idx, offsets, batch.times[sel], batch.labels[sel]


def _valid_samples(model, spec, kappa, conditioning, t, n, seed, mode, n_jobs):
    if isinstance(conditioning, MppHistory):
        state = conditioning.label_at(t)
        last_jump = conditioning.truncate(t).times[-1] if conditioning.truncate(t).events else 0.0
    else:
        state, last_jump = conditioning, 0.0
    start = t if mode == "restart" else last_jump
    batch = simulate_batch(model, state, spec.horizon, seed, np.arange(n), start=start, n_jobs=n_jobs)
    idx, offsets, times, labels = _accepted(batch, t)
    fp = FuturePayments(spec, kappa, model.states)
    return fp(t, batch.initial[idx], offsets, times, labels)


def _transaction_samples(tmodel, spec, kappa, observed, t, n, seed, mode, n_jobs):
    z = observed.z_at(t)
    h = observed.as_of(t, t)
    revs = [r.time for r in observed.revisions if r.time <= t]
    start = t if mode == "restart" else (revs[-1] if revs else 0.0)
    corr = {}
    if z in DISABLED:
        ext0 = z
        corr = origin_corrections(observed, spec, kappa, t)
    elif z == "r":
        ext0 = "r" + h.events[_disabled_onset(h)][1].label[1]
    elif z == "d":
        ext0 = "d0"
    else:
        ext0 = "a"
    paths = np.arange(n)
    batch = tmodel.simulate_extended(seed, paths, initial=ext0, start=start, n_jobs=n_jobs)
    u_settle, _ = uniforms(seed, STREAM_SETTLEMENT, paths, 0)
    idx, offsets, times, labels = _accepted(batch, t)
    final_ext = _final_states(batch.initial[idx], offsets, labels)
    origin = _final_origin(tmodel, final_ext, u_settle[idx])
    v_init, v_off, v_times, v_labels = _to_valid(ext0, origin, offsets, times, labels)
    fp = FuturePayments(spec, kappa, LABELS)
    values = fp(t, v_init, v_off, v_times, v_labels)
    if z in DISABLED:
        values = values + np.where(origin == 0, corr["i1"], corr["i2"])
    return values


def _final_states(init, offsets, labels):
    out = init.copy()
    has = np.diff(offsets) > 0
    out[has] = labels[offsets[1:][has] - 1]
    return out


def _final_origin(tmodel, final_ext, u):
    """0/1 origin class per path (-1 when no disability occurred)."""
    E = _EXT
    origin = np.full(len(final_ext), -1)
    origin[np.isin(final_ext, [E["r1"], E["d1"]])] = 0
    origin[np.isin(final_ext, [E["r2"], E["d2"]])] = 1
    dis = np.isin(final_ext, [E["i1"], E["i2"]])
    origin[dis] = tmodel.settle(final_ext[dis] - E["i1"], u[dis])
    return origin


_EXT = {s: n for n, s in enumerate(EXTENDED)}
_V = {s: n for n, s in enumerate(LABELS)}


def _to_valid(ext0, origin, offsets, times, labels):
    """Map extended-chain continuations to true-history continuations (flips vanish)."""
    P = len(origin)
    E = _EXT
    ext_to_valid = np.array([_V["a"], -1, -1, _V["r"], _V["r"], _V["d"], _V["d"], _V["d"]])
    dis_valid = np.where(origin == 0, _V["i1"], _V["i2"])
    init_ext = np.full(P, E[ext0])
    if ext0 in DISABLED:
        init = dis_valid.copy()
    else:
        init = ext_to_valid[init_ext]
    counts = np.diff(offsets)
    path = np.repeat(np.arange(P), counts)
    prev = np.insert(labels, offsets[:-1], init_ext)
    prev = prev[np.delete(np.arange(len(prev)), offsets[1:] + np.arange(P))]
    is_dis = (labels == E["i1"]) | (labels == E["i2"])
    onset = is_dis & (prev == E["a"])
    keep = onset | ~is_dis
    mapped = np.where(is_dis, dis_valid[path], ext_to_valid[labels])
    new_counts = np.bincount(path[keep], minlength=P)
    new_offsets = np.concatenate(([0], np.cumsum(new_counts)))
    return init, new_offsets, times[keep], mapped[keep]


RESERVE_COLUMNS = ("t", "method", "value", "std_error", "n_paths")


def write_reserves(rows, stream: io.TextIOBase) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RESERVE_COLUMNS)
    for t, est in rows:
        w.writerow((format_time(t), est.method, repr(float(est.value)), repr(float(est.std_error)), est.n_paths))
