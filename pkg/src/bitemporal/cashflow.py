"""Payment specifications, valid-time and transaction-time cash-flow ledgers."""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .bitemporal import TransactionTimeline
from .mpp import MppHistory
from .temporal import AccumulationFunction, PiecewiseConstant, format_time

TAGS = ("sojourn", "transition", "backpay")


def _freeze(mapping):
    return tuple(sorted(mapping.items(), key=lambda kv: str(kv[0])))


@dataclass(frozen=True)
class PaymentSpec:
    """Sojourn rates, sojourn lump sums and transition payments, all vanishing after ``horizon``.

    ``duration_rates`` maps a state to a rate that depends on the time spent
    in that state; it is honoured by :func:`valid_ledger` but the Markov
    reserve solvers reject it.
    """

    states: tuple
    horizon: float
    sojourn_rates: Mapping = field(default_factory=dict)
    sojourn_atoms: Mapping = field(default_factory=dict)
    transition_payments: Mapping = field(default_factory=dict)
    duration_rates: Mapping = field(default_factory=dict)

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        object.__setattr__(self, "horizon", float(self.horizon))

        def check(label):
            if label not in states:
                raise ValueError(f"payment references undeclared state {label!r}")

        rates = {}
        for j, f in dict(self.sojourn_rates).items():
            check(j)
            f = PiecewiseConstant.from_segments(f)
            if not f.is_zero:
                rates[j] = f
        atoms = {}
        for j, lst in dict(self.sojourn_atoms).items():
            check(j)
            pairs = tuple(sorted((float(t), float(a)) for t, a in lst))
            if len({t for t, _ in pairs}) != len(pairs):
                raise ValueError(f"sojourn atoms of {j!r} must be at distinct times")
            if not all(math.isfinite(t) and math.isfinite(a) for t, a in pairs):
                raise ValueError("sojourn atoms must be finite")
            pairs = tuple(p for p in pairs if p[1] != 0.0)
            if pairs:
                atoms[j] = pairs
        trans = {}
        for (j, k), f in dict(self.transition_payments).items():
            check(j)
            check(k)
            f = PiecewiseConstant.from_segments(f)
            if not f.is_zero:
                trans[(j, k)] = f
        dur = {}
        for j, f in dict(self.duration_rates).items():
            check(j)
            f = PiecewiseConstant.from_segments(f)
            if not f.is_zero:
                dur[j] = f
        object.__setattr__(self, "sojourn_rates", rates)
        object.__setattr__(self, "sojourn_atoms", atoms)
        object.__setattr__(self, "transition_payments", trans)
        object.__setattr__(self, "duration_rates", dur)

    def __hash__(self) -> int:
        return hash(
            (
                self.states,
                self.horizon,
                _freeze(self.sojourn_rates),
                _freeze(self.sojourn_atoms),
                _freeze(self.transition_payments),
                _freeze(self.duration_rates),
            )
        )

    def rate(self, j: str) -> PiecewiseConstant:
        return self.sojourn_rates.get(j, PiecewiseConstant.constant(0.0))

    def atoms(self, j: str) -> tuple:
        return self.sojourn_atoms.get(j, ())

    def transition(self, j: str, k: str) -> PiecewiseConstant:
        return self.transition_payments.get((j, k), PiecewiseConstant.constant(0.0))

    @property
    def duration_dependent(self) -> bool:
        return bool(self.duration_rates)

    def scaled(self, c: float) -> "PaymentSpec":
        return PaymentSpec(
            self.states,
            self.horizon,
            {j: f.scaled(c) for j, f in self.sojourn_rates.items()},
            {j: tuple((t, c * a) for t, a in lst) for j, lst in self.sojourn_atoms.items()},
            {jk: f.scaled(c) for jk, f in self.transition_payments.items()},
            {j: f.scaled(c) for j, f in self.duration_rates.items()},
        )

    def breakpoints(self) -> list:
        pts = set()
        for f in list(self.sojourn_rates.values()) + list(self.transition_payments.values()):
            pts.update(f.breakpoints)
        for lst in self.sojourn_atoms.values():
            pts.update(t for t, _ in lst)
        return sorted(pts)


@dataclass(frozen=True)
class Interval:
    start: float
    end: float
    closed_start: bool = True
    closed_end: bool = True

    @classmethod
    def prospective(cls, t: float) -> "Interval":
        """The window (t, inf)."""
        return cls(t, math.inf, False, False)


class CashFlowLedger:
    """Rate segments ``(from, to, rate)`` plus dated atoms ``(time, amount, tag)``.

    The stored form is canonical: abutting segments with equal rates are
    merged and zero payments are dropped, so two ledgers describing the same
    payment stream compare equal.
    """

    __slots__ = ("segments", "atoms", "_cache")

    def __init__(self, segments=(), atoms=()):
        segs = sorted((float(a), float(b), float(r)) for a, b, r in segments if r != 0.0 and b > a)
        merged = []
        for a, b, r in segs:
            if merged and merged[-1][1] > a:
                raise ValueError("rate segments overlap")
            if merged and merged[-1][1] == a and merged[-1][2] == r:
                merged[-1] = (merged[-1][0], b, r)
            else:
                merged.append((a, b, r))
        ats = [(float(t), float(x), tag) for t, x, tag in atoms if x != 0.0]
        for _, _, tag in ats:
            if tag not in TAGS:
                raise ValueError(f"unknown atom tag {tag!r}")
        ats.sort(key=lambda a: (a[0], TAGS.index(a[2])))
        self.segments = tuple(merged)
        self.atoms = tuple(ats)
        self._cache = {}

    def __eq__(self, other) -> bool:
        return isinstance(other, CashFlowLedger) and self.segments == other.segments and self.atoms == other.atoms

    def __hash__(self) -> int:
        return hash((self.segments, self.atoms))

    def __repr__(self) -> str:
        return f"CashFlowLedger(segments={list(self.segments)}, atoms={list(self.atoms)})"

    def restrict(self, a: float, b: float) -> "CashFlowLedger":
        """Payments in the half-open window [a, b)."""
        segs = [(max(s, a), min(e, b), r) for s, e, r in self.segments if e > a and s < b]
        ats = [x for x in self.atoms if a <= x[0] < b]
        return CashFlowLedger(segs, ats)

    def backpay_atoms(self) -> tuple:
        return tuple(x for x in self.atoms if x[2] == "backpay")

    def _prefix(self, kappa: AccumulationFunction):
        hit = self._cache.get(kappa)
        if hit is None:
            starts = [s for s, _, _ in self.segments]
            seg_cum = [0.0]
            for s, e, r in self.segments:
                seg_cum.append(seg_cum[-1] + kappa.discounted_integral(s, e, r))
            times = [t for t, _, _ in self.atoms]
            atom_cum = [0.0]
            for t, x, _ in self.atoms:
                atom_cum.append(atom_cum[-1] + x / kappa.accumulate(t))
            hit = (starts, seg_cum, times, atom_cum)
            self._cache[kappa] = hit
        return hit

    def _cumulative(self, kappa, x: float, inclusive: bool) -> float:
        """Discounted payments on [0, x] (``inclusive``) or [0, x)."""
        starts, seg_cum, times, atom_cum = self._prefix(kappa)
        i = bisect.bisect_left(starts, x) - 1
        value = 0.0
        if i >= 0:
            s, e, r = self.segments[i]
            value = seg_cum[i]
            value += seg_cum[i + 1] - seg_cum[i] if x >= e else kappa.discounted_integral(s, x, r)
        if x == math.inf:
            return seg_cum[-1] + atom_cum[-1]
        n = bisect.bisect_right(times, x) if inclusive else bisect.bisect_left(times, x)
        return value + atom_cum[n]

    def discounted_value(self, kappa: AccumulationFunction, window: Interval | None = None) -> float:
        """Integral of 1/kappa against the payment stream over ``window`` (default [0, inf))."""
        if window is None:
            window = Interval(0.0, math.inf)
        hi = self._cumulative(kappa, window.end, window.closed_end)
        lo = self._cumulative(kappa, window.start, not window.closed_start)
        return hi - lo


def discounted_value(ledger: CashFlowLedger, kappa: AccumulationFunction, window: Interval | None = None) -> float:
    return ledger.discounted_value(kappa, window)


def valid_ledger(h: MppHistory, spec: PaymentSpec) -> CashFlowLedger:
    T = spec.horizon
    segs, atoms = [], []
    prev = None
    for s, e, label in h.intervals():
        if prev is not None and s <= T:
            amount = spec.transition(prev, label)(s)
            atoms.append((s, amount, "transition"))
        prev = label
        if s > T:
            break
        stop = min(e, T)
        for a, b, r in spec.rate(label).pieces(s, stop):
            segs.append((a, b, r))
        if label in spec.duration_rates:
            for a, b, r in spec.duration_rates[label].shifted(s).pieces(s, stop):
                segs.append((a, b, r))
        for u, x in spec.atoms(label):
            if s <= u and (u < e) and u <= T:
                atoms.append((u, x, "sojourn"))
    # sojourn and duration rates can overlap on the same interval; sum them
    return CashFlowLedger(_sum_segments(segs), atoms)


def _sum_segments(segs):
    if not segs:
        return []
    pts = sorted({p for a, b, _ in segs for p in (a, b)})
    if len(pts) == 2 * len(segs) or _disjoint(segs):
        return segs
    out = []
    for a, b in zip(pts, pts[1:]):
        r = sum(rate for s, e, rate in segs if s <= a and e >= b)
        out.append((a, b, r))
    return out


def _disjoint(segs) -> bool:
    s = sorted(segs)
    return all(x[1] <= y[0] for x, y in zip(s, s[1:]))


def transaction_ledger(tl: TransactionTimeline, spec: PaymentSpec, kappa: AccumulationFunction) -> CashFlowLedger:
    """Running payments under the current belief plus a backpay atom at each revision."""
    bounds = [0.0] + [r.time for r in tl.revisions] + [math.inf]
    histories = [tl.initial_history] + [r.revised_history for r in tl.revisions]
    ledgers = [valid_ledger(h, spec) for h in histories]
    segs, atoms = [], []
    for n, led in enumerate(ledgers):
        part = led.restrict(bounds[n], bounds[n + 1])
        segs.extend(part.segments)
        atoms.extend(part.atoms)
        if n > 0:
            amount = _backpay(histories[n - 1], histories[n], ledgers[n - 1], led, bounds[n], kappa)
            if amount:
                atoms.append((bounds[n], amount, "backpay"))
    return CashFlowLedger(segs, atoms)


def _backpay(old_h, new_h, old_led, new_led, s, kappa) -> float:
    if old_h.truncate(s, inclusive=False) == new_h.truncate(s, inclusive=False):
        return 0.0
    window = Interval(0.0, s, True, False)
    return kappa.accumulate(s) * (new_led.discounted_value(kappa, window) - old_led.discounted_value(kappa, window))


def backpay_at(tl: TransactionTimeline, s: float, spec: PaymentSpec, kappa: AccumulationFunction) -> float:
    if s not in tl.revision_times:
        return 0.0
    old_h, new_h = tl.carried_before(s), tl.carried(s)
    return _backpay(old_h, new_h, valid_ledger(old_h, spec), valid_ledger(new_h, spec), s, kappa)


LEDGER_COLUMNS = ("kind", "from", "to", "time", "amount", "tag")


def write_ledger(ledger: CashFlowLedger, stream: io.TextIOBase) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(LEDGER_COLUMNS)
    for a, b, r in ledger.segments:
        w.writerow(("rate", format_time(a), format_time(b), "", repr(r), ""))
    for t, x, tag in ledger.atoms:
        w.writerow(("atom", "", "", format_time(t), repr(x), tag))


def read_ledger(stream: io.TextIOBase) -> CashFlowLedger:
    reader = csv.DictReader(stream)
    if tuple(reader.fieldnames or ()) != LEDGER_COLUMNS:
        raise ValueError(f"ledger CSV must have columns {','.join(LEDGER_COLUMNS)}")
    segs, atoms = [], []
    for row in reader:
        if row["kind"] == "rate":
            segs.append((float(row["from"]), float(row["to"]), float(row["amount"])))
        elif row["kind"] == "atom":
            atoms.append((float(row["time"]), float(row["amount"]), row["tag"]))
        else:
            raise ValueError(f"unknown ledger row kind {row['kind']!r}")
    return CashFlowLedger(segs, atoms)


class DiscountedCumulative:
    """Vectorised ``x -> int_0^x rate(v) / kappa(v) dv`` (exact for piecewise-constant inputs)."""

    def __init__(self, rate: PiecewiseConstant, kappa: AccumulationFunction):
        bps = sorted(set(rate.breakpoints) | set(kappa.force.breakpoints))
        self.bp = np.asarray(bps)
        self.c = rate.at(self.bp)
        self.r = kappa.force.at(self.bp)
        self.disc = np.exp(-np.asarray(kappa.log_accumulate(self.bp)))
        widths = np.diff(self.bp)
        pieces = self._piece(np.arange(len(self.bp) - 1), widths)
        self.cum = np.concatenate(([0.0], np.cumsum(pieces)))

    def _piece(self, i, length):
        r = self.r[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(r == 0.0, length, -np.expm1(-r * length) / np.where(r == 0.0, 1.0, r))
        return self.c[i] * self.disc[i] * factor

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        i = np.searchsorted(self.bp, x, side="right") - 1
        return self.cum[i] + self._piece(i, x - self.bp[i])
