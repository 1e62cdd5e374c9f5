"""Transaction-time timelines: append-only revisions of the believed history."""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .mpp import Mark, MppHistory
from .temporal import UNBOUNDED, format_time, parse_time, to_float


@dataclass(frozen=True)
class RevisionEvent:
    time: float
    z_state: str
    revised_history: MppHistory


class TimelineError(ValueError):
    pass


@dataclass(frozen=True)
class TransactionTimeline:
    """The transaction-time process: a start state plus revisions, each carrying a full history.

    The constructor enforces the structural assumptions; use :meth:`unchecked`
    to build deliberately broken timelines (for validation tests).
    """

    initial_z: str
    initial_history: MppHistory = None
    revisions: tuple = ()
    absorption: float = None

    def __post_init__(self):
        init = self.initial_history if self.initial_history is not None else MppHistory(Mark(self.initial_z))
        object.__setattr__(self, "initial_history", init)
        object.__setattr__(self, "revisions", tuple(self.revisions))
        if self.absorption is None:
            eta = self.revisions[-1].time if self.revisions else 0.0
            object.__setattr__(self, "absorption", float(eta))
        object.__setattr__(self, "_times", [r.time for r in self.revisions])
        if getattr(self, "_skip_checks", False):
            return
        problems = _structural_violations(self)
        if problems:
            raise TimelineError(problems[0].message)

    @classmethod
    def unchecked(cls, initial_z, revisions, absorption=None, initial_history=None) -> "TransactionTimeline":
        obj = cls.__new__(cls)
        object.__setattr__(obj, "_skip_checks", True)
        cls.__init__(obj, initial_z, initial_history, tuple(revisions), absorption)
        return obj

    @property
    def revision_times(self) -> tuple:
        return tuple(self._times)

    def _index(self, t: float) -> int:
        """Index of the last revision at or before ``t`` (-1 if none)."""
        return bisect.bisect_right(self._times, t) - 1

    def carried(self, t: float) -> MppHistory:
        i = self._index(t)
        return self.initial_history if i < 0 else self.revisions[i].revised_history

    def carried_before(self, t: float) -> MppHistory:
        """History carried just before ``t`` (left limit)."""
        i = bisect.bisect_left(self._times, t) - 1
        return self.initial_history if i < 0 else self.revisions[i].revised_history

    def z_at(self, t: float) -> str:
        i = self._index(t)
        return self.initial_z if i < 0 else self.revisions[i].z_state

    def as_of(self, t: float, s: float) -> MppHistory:
        return self.carried(t).truncate(min(s, t))

    @property
    def finalized(self) -> MppHistory:
        return self.revisions[-1].revised_history if self.revisions else self.initial_history

    def prefix(self, t: float) -> "TransactionTimeline":
        """The observable part of the timeline up to and including ``t``."""
        i = self._index(t)
        revs = self.revisions[: i + 1]
        return TransactionTimeline.unchecked(self.initial_z, revs, None, self.initial_history)


def as_of(tl: TransactionTimeline, t: float, s: float) -> MppHistory:
    return tl.as_of(t, s)


def absorption_time(tl: TransactionTimeline) -> float:
    return tl.absorption


@dataclass(frozen=True)
class Violation:
    assumption: str
    message: str
    times: tuple = ()


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def lines(self) -> list[str]:
        return [
            f"{v.assumption}: {v.message}" + (f" at {','.join(format_time(t) for t in v.times)}" if v.times else "")
            for v in self.violations
        ]


def _structural_violations(tl: TransactionTimeline) -> list[Violation]:
    out = []
    if tl.initial_history.events:
        out.append(Violation("adapted", "initial history must be empty", (0.0,)))
    times = [r.time for r in tl.revisions]
    bad = [b for a, b in zip(times, times[1:]) if not b > a]
    if any(t <= 0 for t in times[:1]):
        bad.insert(0, times[0])
    if bad:
        out.append(Violation("adapted", "revision times not strictly increasing", tuple(bad)))
    ahead = [r.time for r in tl.revisions if r.revised_history.events and r.revised_history.events[-1][0] > r.time]
    if ahead:
        out.append(Violation("adapted", "history ahead of transaction time", tuple(ahead)))
    if not math.isfinite(tl.absorption):
        out.append(Violation("finite absorption", "absorption time not finite"))
    elif tl.absorption < (times[-1] if times else 0.0):
        out.append(Violation("final history", "absorption time before the last revision", (tl.absorption,)))
    for r in tl.revisions:
        if r.revised_history.initial.label != tl.initial_z:
            out.append(Violation("adapted", "revision changes the initial state", (r.time,)))
            break
    return out


def validate_assumptions(obj) -> ValidationReport:
    """Check a timeline, or a list of records, against the structural assumptions."""
    if isinstance(obj, TransactionTimeline):
        report = ValidationReport(_structural_violations(obj))
        if report.ok:
            eta = obj.absorption
            final = obj.finalized
            for t in (eta, eta + 1.0, eta + 1e6):
                if obj.carried(t) != final:
                    report.violations.append(Violation("final history", "query after absorption differs from final history", (t,)))
                    break
        return report
    rows = list(obj)
    report = ValidationReport(_record_violations(rows))
    if report.ok:
        try:
            tl = import_records(rows)
        except TimelineError as exc:
            report.violations.append(Violation("adapted", str(exc)))
        else:
            report.violations.extend(validate_assumptions(tl).violations)
    return report


@dataclass(frozen=True)
class BitemporalRecord:
    state: str
    valid_from: float
    valid_till: object
    recorded: float
    superseded: object

    def key(self):
        return (self.state, self.valid_from, to_float(self.valid_till))


def _record_violations(rows: Sequence[BitemporalRecord]) -> list[Violation]:
    out = []
    for r in rows:
        if not to_float(r.recorded) < to_float(r.superseded):
            out.append(Violation("adapted", "empty transaction interval", (r.recorded,)))
        if not to_float(r.valid_from) < to_float(r.valid_till):
            out.append(Violation("adapted", "empty valid interval", (r.recorded,)))
    by_key: dict = {}
    for r in rows:
        by_key.setdefault(r.key(), []).append(r)
    for copies in by_key.values():
        copies.sort(key=lambda r: r.recorded)
        for a, b in zip(copies, copies[1:]):
            if to_float(a.superseded) <= b.recorded:
                out.append(Violation("adapted", "non-monotone supersession", (to_float(a.superseded), b.recorded)))
    return out


def _snapshot_rows(h: MppHistory) -> list[tuple]:
    return [(lbl, s, e) for s, e, lbl in h.intervals()]


def export_records(tl: TransactionTimeline) -> list[BitemporalRecord]:
    snapshots = [(0.0, tl.initial_history)] + [(r.time, r.revised_history) for r in tl.revisions]
    open_rows: dict = {}
    out = []
    for stamp, h in snapshots:
        current = _snapshot_rows(h)
        cur_keys = set(current)
        for key in [k for k in open_rows if k not in cur_keys]:
            out.append((key, open_rows.pop(key), stamp))
        for key in current:
            if key not in open_rows:
                open_rows[key] = stamp
    for key, rec in open_rows.items():
        out.append((key, rec, math.inf))
    out.sort(key=lambda x: (x[1], x[0][1], x[0][0]))
    return [
        BitemporalRecord(
            lbl,
            vf,
            UNBOUNDED if math.isinf(vt) else vt,
            rec,
            UNBOUNDED if math.isinf(sup) else sup,
        )
        for (lbl, vf, vt), rec, sup in out
    ]


def import_records(rows: Iterable[BitemporalRecord]) -> TransactionTimeline:
    rows = list(rows)
    for r in rows:
        if not to_float(r.recorded) < to_float(r.superseded):
            raise TimelineError(f"empty transaction interval at {format_time(r.recorded)}")
    stamps = sorted({float(r.recorded) for r in rows} | {to_float(r.superseded) for r in rows} - {math.inf})
    if not stamps or stamps[0] != 0.0:
        stamps.insert(0, 0.0)
    histories = []
    for stamp in stamps:
        live = sorted(
            (r for r in rows if r.recorded <= stamp < to_float(r.superseded)),
            key=lambda r: r.valid_from,
        )
        if not live or live[0].valid_from != 0.0 or live[-1].valid_till is not UNBOUNDED:
            raise TimelineError(f"inconsistent snapshot at {format_time(stamp)}")
        for a, b in zip(live, live[1:]):
            if to_float(a.valid_till) != b.valid_from:
                raise TimelineError(f"inconsistent snapshot at {format_time(stamp)}")
        h = MppHistory.from_jumps(live[0].state, [(r.valid_from, r.state) for r in live[1:]])
        histories.append((stamp, h))
    base = histories[0][1]
    if base.events:
        raise TimelineError("inconsistent snapshot at 0.0")
    revisions = []
    prev = base
    for stamp, h in histories[1:]:
        if h != prev:
            revisions.append(RevisionEvent(stamp, h.label_at(stamp), h))
            prev = h
    return TransactionTimeline(base.initial.label, base, tuple(revisions))


RECORD_COLUMNS = ("state", "valid_from", "valid_till", "recorded", "superseded")


def write_records(rows: Iterable, stream: io.TextIOBase, with_path: bool = False) -> None:
    """Write records; with ``with_path`` the rows are ``(path_id, record)`` pairs."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow((("path_id",) if with_path else ()) + RECORD_COLUMNS)
    for item in rows:
        pid, r = item if with_path else (None, item)
        cells = (r.state, format_time(r.valid_from), format_time(r.valid_till), format_time(r.recorded), format_time(r.superseded))
        w.writerow(((pid,) if with_path else ()) + cells)


def read_records(stream: io.TextIOBase):
    """Read a record table. Returns a list, or a ``{path_id: list}`` dict for multi-path files."""
    reader = csv.DictReader(stream)
    cols = tuple(reader.fieldnames or ())
    with_path = cols == ("path_id",) + RECORD_COLUMNS
    if cols != RECORD_COLUMNS and not with_path:
        raise ValueError(f"record CSV must have columns {','.join(RECORD_COLUMNS)}")
    grouped: dict = {}
    for row in reader:
        rec = BitemporalRecord(
            row["state"],
            _finite(row["valid_from"]),
            parse_time(row["valid_till"]),
            _finite(row["recorded"]),
            parse_time(row["superseded"]),
        )
        grouped.setdefault(int(row["path_id"]) if with_path else None, []).append(rec)
    if with_path:
        return grouped
    return grouped.get(None, [])


def _finite(text: str) -> float:
    value = parse_time(text)
    if value is UNBOUNDED:
        raise ValueError("valid_from and recorded must be finite")
    return value
