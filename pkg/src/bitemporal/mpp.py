"""Marked point processes and pure-jump state processes on a finite label space."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rng import STREAM_JUMPS, uniforms
from .temporal import PiecewiseConstant, format_time, merge_breakpoints


class ExplosionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mark:
    label: str
    last_jump_time: float = 0.0

    def duration(self, t: float) -> float:
        """Time spent in the current state at ``t``."""
        return t - self.last_jump_time


@dataclass(frozen=True)
class MppHistory:
    """Initial mark plus strictly ordered jump events ``(time, mark)``."""

    initial: Mark
    events: tuple = ()

    def __post_init__(self):
        events = tuple((float(t), m) for t, m in self.events)
        prev = 0.0
        for t, m in events:
            if not t > prev:
                raise ValueError(f"event times must be positive and strictly increasing (got {t} after {prev})")
            if m.last_jump_time != t:
                raise ValueError("mark.last_jump_time must equal the event time")
            prev = t
        object.__setattr__(self, "events", events)

    @classmethod
    def from_jumps(cls, initial: str, jumps: Iterable[tuple[float, str]] = ()) -> "MppHistory":
        return cls(Mark(initial, 0.0), tuple((float(t), Mark(lbl, float(t))) for t, lbl in jumps))

    @property
    def times(self) -> tuple:
        return tuple(t for t, _ in self.events)

    @property
    def labels(self) -> tuple:
        return tuple(m.label for _, m in self.events)

    def jumps(self) -> tuple:
        return tuple((t, m.label) for t, m in self.events)

    def __len__(self) -> int:
        return len(self.events)

    def truncate(self, t: float, inclusive: bool = True) -> "MppHistory":
        if inclusive:
            kept = tuple(e for e in self.events if e[0] <= t)
        else:
            kept = tuple(e for e in self.events if e[0] < t)
        if len(kept) == len(self.events):
            return self
        return MppHistory(self.initial, kept)

    def label_at(self, t: float) -> str:
        label = self.initial.label
        for s, m in self.events:
            if s > t:
                break
            label = m.label
        return label

    def intervals(self):
        """Yield ``(start, end, label)`` sojourns; the last one ends at ``inf``."""
        start, label = 0.0, self.initial.label
        for t, m in self.events:
            yield start, t, label
            start, label = t, m.label
        yield start, float("inf"), label

    def relabel(self, index: int, label: str) -> "MppHistory":
        t, _ = self.events[index]
        ev = list(self.events)
        ev[index] = (t, Mark(label, t))
        return MppHistory(self.initial, tuple(ev))

    def append(self, t: float, label: str) -> "MppHistory":
        return MppHistory(self.initial, self.events + ((float(t), Mark(label, float(t))),))


def history_at(h: MppHistory, t: float) -> MppHistory:
    """Events with time at most ``t``."""
    return h.truncate(t)


def evaluate_pdp(h: MppHistory, t: float) -> Mark:
    mark = h.initial
    for s, m in h.events:
        if s > t:
            break
        mark = m
    return mark


def count_transitions(h: MppHistory, j: str, k: str, t: float) -> int:
    n, prev = 0, h.initial.label
    for s, m in h.events:
        if s > t:
            break
        if prev == j and m.label == k:
            n += 1
        prev = m.label
    return n


@dataclass(frozen=True)
class CompiledIntensities:
    breakpoints: np.ndarray  # (M,)
    rates: np.ndarray  # (M, J, J)
    totals: np.ndarray  # (M, J)
    cumulative: np.ndarray  # (J, M) hazard accumulated up to each breakpoint
    cum_rates: np.ndarray  # (M, J, J) row-wise cumulative sums


@dataclass(frozen=True)
class IntensitySpec:
    """Transition intensities ``lambda_jk(t)``, piecewise constant in ``t``."""

    states: tuple
    rates: Mapping = field(default_factory=dict)

    def __post_init__(self):
        states = tuple(self.states)
        if len(set(states)) != len(states):
            raise ValueError("duplicate state labels")
        clean = {}
        for (j, k), f in dict(self.rates).items():
            if j not in states or k not in states:
                raise ValueError(f"intensity {j}->{k} references an undeclared state")
            if j == k:
                raise ValueError("diagonal intensities are implied")
            f = PiecewiseConstant.from_segments(f)
            if not f.is_nonnegative():
                raise ValueError(f"intensity {j}->{k} must be non-negative")
            if not f.is_zero:
                clean[(j, k)] = f
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "rates", clean)

    def __hash__(self) -> int:
        return hash((self.states, tuple(sorted(self.rates.items()))))

    def index(self, label: str) -> int:
        try:
            return self.states.index(label)
        except ValueError:
            raise KeyError(f"unknown state {label!r}") from None

    def rate(self, j: str, k: str) -> PiecewiseConstant:
        return self.rates.get((j, k), PiecewiseConstant.constant(0.0))

    def is_absorbing(self, j: str) -> bool:
        return not any(a == j for a, _ in self.rates)

    def scaled(self, factors: Mapping) -> "IntensitySpec":
        """Multiply selected intensities, e.g. ``{("a", "d"): 2.0}``."""
        new = dict(self.rates)
        for key, c in factors.items():
            if key in new:
                new[key] = new[key].scaled(c)
        return IntensitySpec(self.states, new)

    @cached_property
    def compiled(self) -> CompiledIntensities:
        bps = merge_breakpoints(self.rates.values())
        J, M = len(self.states), len(bps)
        rates = np.zeros((M, J, J))
        for (j, k), f in self.rates.items():
            rates[:, self.index(j), self.index(k)] = f.at(bps)
        totals = rates.sum(axis=2)
        widths = np.diff(bps)
        cum = np.zeros((J, M))
        if M > 1:
            cum[:, 1:] = np.cumsum(totals[:-1] * widths[:, None], axis=0).T
        return CompiledIntensities(bps, rates, totals, cum, np.cumsum(rates, axis=2))

    def generator(self, t: float) -> np.ndarray:
        c = self.compiled
        m = max(int(np.searchsorted(c.breakpoints, t, side="right")) - 1, 0)
        q = c.rates[m].copy()
        q[np.diag_indices_from(q)] = -c.totals[m]
        return q


@dataclass
class PathBatch:
    """Simulated paths in compressed layout: events of path ``i`` are ``offsets[i]:offsets[i+1]``."""

    states: tuple
    path_ids: np.ndarray
    initial: np.ndarray
    start: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.path_ids)

    def n_jumps(self) -> np.ndarray:
        return np.diff(self.offsets)

    def final_state(self) -> np.ndarray:
        out = self.initial.copy()
        n = self.n_jumps()
        has = n > 0
        out[has] = self.labels[self.offsets[1:][has] - 1]
        return out

    def events(self, i: int) -> list[tuple[float, str]]:
        a, b = self.offsets[i], self.offsets[i + 1]
        return [(float(t), self.states[s]) for t, s in zip(self.times[a:b], self.labels[a:b])]

    def history(self, i: int) -> MppHistory:
        if self.start[i] != 0.0:
            raise ValueError("only paths started at time 0 form a full history")
        return MppHistory.from_jumps(self.states[self.initial[i]], self.events(i))

    @staticmethod
    def concatenate(batches: Sequence["PathBatch"]) -> "PathBatch":
        first = batches[0]
        if len(batches) == 1:
            return first
        offsets = [np.zeros(1, dtype=np.int64)]
        base = 0
        for b in batches:
            offsets.append(b.offsets[1:] + base)
            base += b.offsets[-1]
        return PathBatch(
            first.states,
            np.concatenate([b.path_ids for b in batches]),
            np.concatenate([b.initial for b in batches]),
            np.concatenate([b.start for b in batches]),
            np.concatenate(offsets),
            np.concatenate([b.times for b in batches]),
            np.concatenate([b.labels for b in batches]),
        )


def _simulate_chunk(spec, init, start, horizon, seed, paths, stream, max_jumps):
    c = spec.compiled
    n = len(paths)
    state = init.copy()
    now = start.copy()
    alive = np.arange(n)
    rows, times, labels = [], [], []
    M = len(c.breakpoints)
    upper = np.append(c.breakpoints[1:], np.inf)
    for draw in range(max_jumps + 1):
        if alive.size == 0:
            break
        if draw == max_jumps:
            raise ExplosionError("too many jumps before the horizon; intensities look explosive")
        u_time, u_dest = uniforms(seed, stream, paths[alive], draw)
        exp_draw = -np.log(u_time)
        keep = np.zeros(alive.size, dtype=bool)
        new_time = np.empty(alive.size)
        new_state = np.empty(alive.size, dtype=np.int64)
        for j in np.unique(state[alive]):
            sel = np.nonzero(state[alive] == j)[0]
            s = now[alive[sel]]
            ms = np.searchsorted(c.breakpoints, s, side="right") - 1
            target = c.cumulative[j, ms] + c.totals[ms, j] * (s - c.breakpoints[ms]) + exp_draw[sel]
            m = np.searchsorted(c.cumulative[j], target, side="right") - 1
            m = np.clip(m, 0, M - 1)
            m = np.maximum(m, ms)
            rate = c.totals[m, j]
            ok = rate > 0
            with np.errstate(divide="ignore", invalid="ignore"):
                tau = c.breakpoints[m] + (target - c.cumulative[j, m]) / np.where(ok, rate, 1.0)
            tau = np.minimum(tau, upper[m])
            tau = np.where(tau <= s, np.nextafter(s, np.inf), tau)
            ok &= tau <= horizon
            cs = c.cum_rates[m, j, :]
            dest = (cs <= (u_dest[sel] * rate)[:, None]).sum(axis=1)
            dest = np.minimum(dest, len(spec.states) - 1)
            keep[sel] = ok
            new_time[sel] = tau
            new_state[sel] = dest
        idx = alive[keep]
        rows.append(idx)
        times.append(new_time[keep])
        labels.append(new_state[keep])
        now[idx] = new_time[keep]
        state[idx] = new_state[keep]
        alive = idx
    if rows:
        r = np.concatenate(rows)
        order = np.argsort(r, kind="stable")
        r = r[order]
        t = np.concatenate(times)[order]
        lab = np.concatenate(labels)[order]
    else:
        r, t, lab = np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(np.bincount(r, minlength=n))
    return PathBatch(spec.states, paths.copy(), init.copy(), start.copy(), offsets, t, lab)


def simulate_batch(
    spec: IntensitySpec,
    initial,
    horizon: float,
    seed: int,
    paths,
    start=0.0,
    stream: int = STREAM_JUMPS,
    max_jumps: int = 10_000,
    n_jobs: int = 1,
) -> PathBatch:
    """Simulate many paths; path ``p`` uses the random stream keyed by ``(seed, p)``.

    ``initial`` is a label, or an array of state indices, one per path.
    """
    paths = np.asarray(paths, dtype=np.int64).ravel()
    n = len(paths)
    if isinstance(initial, str):
        init = np.full(n, spec.index(initial), dtype=np.int64)
    else:
        init = np.asarray(initial, dtype=np.int64).ravel().copy()
    start_arr = np.broadcast_to(np.asarray(start, dtype=float), (n,)).copy()
    horizon = float(horizon)
    if not np.isfinite(horizon):
        raise ValueError("horizon must be finite")
    if n_jobs <= 1 or n < 2 * n_jobs:
        return _simulate_chunk(spec, init, start_arr, horizon, seed, paths, stream, max_jumps)
    bounds = np.linspace(0, n, n_jobs + 1).astype(int)
    spec.compiled  # build once before threads share it
    with ThreadPoolExecutor(n_jobs) as pool:
        parts = list(
            pool.map(
                lambda ab: _simulate_chunk(
                    spec, init[ab[0]:ab[1]], start_arr[ab[0]:ab[1]], horizon, seed, paths[ab[0]:ab[1]], stream, max_jumps
                ),
                zip(bounds[:-1], bounds[1:]),
            )
        )
    return PathBatch.concatenate(parts)


def simulate_path(spec: IntensitySpec, initial: str, horizon: float, seed: int, path: int = 0) -> MppHistory:
    return simulate_batch(spec, initial, horizon, seed, [path]).history(0)


HISTORY_COLUMNS = ("path_id", "time", "from_label", "to_label")


def write_histories(histories: Iterable[tuple[int, MppHistory]], stream: io.TextIOBase) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for pid, h in histories:
        prev = h.initial.label
        for t, m in h.events:
            w.writerow((pid, format_time(t), prev, m.label))
            prev = m.label


def read_histories(stream: io.TextIOBase) -> dict[int, MppHistory]:
    reader = csv.DictReader(stream)
    if tuple(reader.fieldnames or ()) != HISTORY_COLUMNS:
        raise ValueError(f"history CSV must have columns {','.join(HISTORY_COLUMNS)}")
    jumps: dict[int, list] = {}
    first: dict[int, str] = {}
    for row in reader:
        pid = int(row["path_id"])
        lst = jumps.setdefault(pid, [])
        if not lst:
            first[pid] = row["from_label"]
        elif lst[-1][1] != row["from_label"]:
            raise ValueError(f"path {pid}: from_label does not match previous to_label")
        lst.append((float(row["time"]), row["to_label"]))
    return {pid: MppHistory.from_jumps(first[pid], ev) for pid, ev in jumps.items()}
