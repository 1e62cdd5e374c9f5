"""Time axis, piecewise-constant functions and continuous compounding."""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np


class Unbounded(enum.Enum):
    """Sentinel for open-ended timestamps (valid till / superseded)."""

    INF = "inf"

    def __repr__(self) -> str:
        return "UNBOUNDED"

    def __str__(self) -> str:
        return "inf"


UNBOUNDED = Unbounded.INF


def to_float(t) -> float:
    """Map an instant (or the sentinel) to a float, with ``inf`` for the sentinel."""
    if t is UNBOUNDED:
        return math.inf
    return float(t)


def format_time(t) -> str:
    if t is UNBOUNDED or (isinstance(t, float) and math.isinf(t)):
        return "inf"
    return repr(float(t))


def parse_time(text: str):
    text = text.strip()
    if text.lower() in ("inf", "infinity", "+inf"):
        return UNBOUNDED
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"invalid timestamp {text!r}")
    return value


def _finite(t) -> float:
    value = to_float(t)
    if not math.isfinite(value):
        raise ValueError("non-finite time")
    return value


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous step function on [0, inf).

    ``values[i]`` holds on ``[breakpoints[i], breakpoints[i + 1])``; the last
    value extends to infinity. Adjacent equal values are merged on construction.
    """

    breakpoints: tuple = (0.0,)
    values: tuple = (0.0,)

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        if len(bps) != len(vals) or not bps:
            raise ValueError("breakpoints and values must have equal, non-zero length")
        if bps[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if not all(math.isfinite(b) for b in bps) or not all(math.isfinite(v) for v in vals):
            raise ValueError("breakpoints and values must be finite")
        merged_b, merged_v = [bps[0]], [vals[0]]
        for b, v in zip(bps[1:], vals[1:]):
            if v != merged_v[-1]:
                merged_b.append(b)
                merged_v.append(v)
        object.__setattr__(self, "breakpoints", tuple(merged_b))
        object.__setattr__(self, "values", tuple(merged_v))

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls((0.0,), (float(value),))

    @classmethod
    def from_segments(cls, segments) -> "PiecewiseConstant":
        """Build from a number, ``[(from, value), ...]`` or ``[{"from": ., "rate": .}, ...]``."""
        if isinstance(segments, PiecewiseConstant):
            return segments
        if isinstance(segments, (int, float)):
            return cls.constant(segments)
        pairs = []
        for seg in segments:
            if isinstance(seg, dict):
                value = seg.get("rate", seg.get("value", seg.get("amount")))
                pairs.append((float(seg["from"]), float(value)))
            else:
                pairs.append((float(seg[0]), float(seg[1])))
        pairs.sort()
        if not pairs or pairs[0][0] != 0.0:
            pairs.insert(0, (0.0, 0.0))
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @cached_property
    def _bp(self) -> np.ndarray:
        return np.asarray(self.breakpoints)

    @cached_property
    def _val(self) -> np.ndarray:
        return np.asarray(self.values)

    def __call__(self, t: float) -> float:
        i = int(np.searchsorted(self._bp, t, side="right")) - 1
        return self.values[max(i, 0)]

    def at(self, t) -> np.ndarray:
        idx = np.searchsorted(self._bp, np.asarray(t, dtype=float), side="right") - 1
        return self._val[np.clip(idx, 0, None)]

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)

    def is_nonnegative(self) -> bool:
        return all(v >= 0.0 for v in self.values)

    def scaled(self, c: float) -> "PiecewiseConstant":
        return PiecewiseConstant(self.breakpoints, tuple(c * v for v in self.values))

    def shifted(self, offset: float) -> "PiecewiseConstant":
        """Return ``t -> self(t - offset)`` for ``t >= offset``; zero before ``offset``."""
        if offset == 0.0:
            return self
        bps = [0.0] + [b + offset for b in self.breakpoints]
        vals = [0.0] + list(self.values)
        return PiecewiseConstant(tuple(bps), tuple(vals))

    def pieces(self, a: float, b: float) -> Iterator[tuple[float, float, float]]:
        """Yield ``(start, end, value)`` covering ``[a, b)``."""
        if b <= a:
            return
        i = max(int(np.searchsorted(self._bp, a, side="right")) - 1, 0)
        start = a
        n = len(self.breakpoints)
        while start < b:
            end = self.breakpoints[i + 1] if i + 1 < n else math.inf
            end = min(end, b)
            yield start, end, self.values[i]
            start = end
            i += 1

    def integral(self, a: float, b: float) -> float:
        return sum(v * (e - s) for s, e, v in self.pieces(a, b))


def merge_breakpoints(functions: Iterable[PiecewiseConstant], extra: Sequence[float] = ()) -> np.ndarray:
    points = {0.0}
    for f in functions:
        points.update(f.breakpoints)
    points.update(float(x) for x in extra)
    return np.array(sorted(points))


class ForceOfInterest(PiecewiseConstant):
    """Per-annum force of interest r(s), constant between breakpoints."""

    @property
    def rates(self) -> tuple:
        return self.values


class AccumulationFunction:
    """kappa(t) = exp(int_0^t r(s) ds) for a piecewise-constant force of interest."""

    def __init__(self, force: PiecewiseConstant | float | None = None):
        if force is None:
            force = 0.0
        if not isinstance(force, PiecewiseConstant):
            force = PiecewiseConstant.from_segments(force)
        self.force = ForceOfInterest(force.breakpoints, force.values)
        bp = np.asarray(self.force.breakpoints)
        rates = np.asarray(self.force.values)
        self._bp = bp
        self._rates = rates
        self._logk = np.concatenate(([0.0], np.cumsum(rates[:-1] * np.diff(bp))))
        self._bp_list = bp.tolist()
        self._rates_list = rates.tolist()
        self._logk_list = self._logk.tolist()
        self._hash = hash(self.force)

    @classmethod
    def constant(cls, rate: float) -> "AccumulationFunction":
        return cls(PiecewiseConstant.constant(rate))

    def __repr__(self) -> str:
        return f"AccumulationFunction({list(zip(self.force.breakpoints, self.force.values))})"

    def __eq__(self, other) -> bool:
        return isinstance(other, AccumulationFunction) and self.force == other.force

    def __hash__(self) -> int:
        return self._hash

    def log_accumulate(self, t):
        if isinstance(t, (float, int)):
            i = max(bisect.bisect_right(self._bp_list, t) - 1, 0)
            return self._logk_list[i] + self._rates_list[i] * (t - self._bp_list[i])
        t_arr = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self._bp, t_arr, side="right") - 1, 0, None)
        out = self._logk[idx] + self._rates[idx] * (t_arr - self._bp[idx])
        return out if out.ndim else float(out)

    def __call__(self, t):
        return np.exp(self.log_accumulate(t))

    def accumulate(self, t) -> float:
        return math.exp(self.log_accumulate(_finite(t)))

    def discount_factor(self, t, s) -> float:
        """kappa(t) / kappa(s)."""
        return math.exp(self.log_accumulate(_finite(t)) - self.log_accumulate(_finite(s)))

    def discounted_integral(self, a: float, b: float, rate: PiecewiseConstant | float = 1.0) -> float:
        """Exact value of int_a^b rate(v) / kappa(v) dv; ``b`` may be ``inf``."""
        if b <= a:
            return 0.0
        if not isinstance(rate, PiecewiseConstant):
            c = float(rate)
            if c == 0.0:
                return 0.0
            return c * sum(
                _annuity_piece(self.log_accumulate(s), r, e - s) for s, e, r in self.force.pieces(a, b)
            )
        total = 0.0
        for s0, e0, c in rate.pieces(a, b):
            if c == 0.0:
                continue
            for s, e, r in self.force.pieces(s0, e0):
                total += c * _annuity_piece(self.log_accumulate(s), r, e - s)
        return total


def _annuity_piece(log_kappa_start: float, r: float, length: float) -> float:
    """int_0^length exp(-(log_kappa_start + r v)) dv."""
    if math.isinf(length):
        if r <= 0.0:
            raise ValueError("divergent discounted integral over an unbounded window")
        return math.exp(-log_kappa_start) / r
    if r == 0.0:
        return math.exp(-log_kappa_start) * length
    return math.exp(-log_kappa_start) * (-math.expm1(-r * length)) / r


def accumulate(kappa: AccumulationFunction, t) -> float:
    """kappa(t), exact for piecewise-constant force of interest."""
    return kappa.accumulate(t)


def discount_factor(kappa: AccumulationFunction, t, s) -> float:
    """kappa(t) / kappa(s): value at ``t`` of one unit paid at ``s``."""
    return kappa.discount_factor(t, s)


@dataclass(frozen=True)
class TimeGrid:
    points: tuple

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if not pts:
            raise ValueError("empty grid")
        if not all(math.isfinite(p) and p >= 0 for p in pts):
            raise ValueError("grid points must be finite and non-negative")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def parse(cls, text: str) -> "TimeGrid":
        """Parse ``"t0:t1:n"`` into ``n`` equally spaced points from t0 to t1 inclusive."""
        try:
            t0, t1, n = text.split(":")
            n = int(n)
        except ValueError as exc:
            raise ValueError(f"grid must look like 't0:t1:n', got {text!r}") from exc
        if n < 1:
            raise ValueError("grid needs at least one point")
        if n == 1:
            return cls((float(t0),))
        return cls(tuple(np.linspace(float(t0), float(t1), n)))

    def __iter__(self):
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points)
