"""Sums at risk and martingale residuals of reserves, for back-testing."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .bitemporal import RevisionEvent, TransactionTimeline
from .cashflow import DiscountedCumulative, Interval, PaymentSpec, valid_ledger
from .mpp import IntensitySpec, MppHistory, PathBatch, simulate_batch
from .temporal import AccumulationFunction, TimeGrid, format_time
from .transaction import DISABLED, TransactionModel
from .valuation import StatewiseReserveTable, reserve_table


@dataclass(frozen=True)
class SumsAtRisk:
    t: float
    from_state: str
    to_state: str
    payment_diff: float
    reserve_diff: float

    @property
    def total(self) -> float:
        return self.payment_diff + self.reserve_diff


def sums_at_risk_markov(model: IntensitySpec, spec: PaymentSpec, kappa: AccumulationFunction,
                        t: float, j: str, k: str) -> SumsAtRisk:
    if j == k:
        raise ValueError("sums at risk need two distinct states")
    table = reserve_table(model, spec, kappa)
    v = table.values_at(t)
    return SumsAtRisk(t, j, k, spec.transition(j, k)(t), float(v[model.index(k)] - v[model.index(j)]))


@dataclass(frozen=True)
class ResidualPath:
    grid: tuple
    residuals: np.ndarray


def _grid(grid) -> np.ndarray:
    return grid.as_array() if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)


# ---------------------------------------------------------------- valid time
class ValidResiduals:
    """Compensator integrals of the Markov sums at risk, tabulated on the reserve nodes.

    For state ``j`` the integrand is ``g_j(s) = sum_k lambda_jk(s) (b_jk(s) + V_k(s) - V_j(s))``.
    Trapezoid sums are accumulated node by node; points between nodes get a
    partial trapezoid using the reserve evaluated there.
    """

    def __init__(self, table: StatewiseReserveTable):
        self.table = table
        model, spec, kappa = table.model, table.spec, table.kappa
        nodes = table.nodes
        mid = 0.5 * (nodes[:-1] + nodes[1:])
        J = len(model.states)
        trans = np.zeros((len(mid), J, J))
        for (j, k), f in spec.transition_payments.items():
            if j in model.states and k in model.states:
                trans[:, model.index(j), model.index(k)] = f.at(mid)
        self.rates = table.step_rates
        self.trans = trans
        self.nodes = nodes
        sol = table.solution
        g_left = self._g(np.arange(len(mid)), sol.right[:-1])
        g_right = self._g(np.arange(len(mid)), sol.left[1:])
        disc = np.exp(-np.asarray(kappa.log_accumulate(nodes)))
        h = np.diff(nodes)[:, None]
        self.g_left = g_left
        self.F = np.vstack((np.zeros(J), np.cumsum(0.5 * h * (g_left + g_right), axis=0)))
        self.Fd = np.vstack((np.zeros(J), np.cumsum(0.5 * h * (g_left * disc[:-1, None] + g_right * disc[1:, None]), axis=0)))
        self.disc_nodes = disc

    def _g(self, steps, v):
        """Integrand for every state at the given steps and reserve vectors (n, J)."""
        diff = v[:, None, :] - v[:, :, None]  # V_k - V_j
        return (self.rates[steps] * (self.trans[steps] + diff)).sum(axis=2)

    def cumulative(self, x: np.ndarray, states: np.ndarray, discounted: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        nodes = self.nodes
        i = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 1)
        base = (self.Fd if discounted else self.F)[i, states]
        inner = nodes[i] != x
        if np.any(inner):
            k = i[inner]
            v = self.table.values_at(x[inner])
            g_x = self._g(k, v)[np.arange(len(k)), states[inner]]
            g_0 = self.g_left[k, states[inner]]
            h = x[inner] - nodes[k]
            if discounted:
                kap = self.table.kappa
                dx = np.exp(-np.asarray(kap.log_accumulate(x[inner])))
                base[inner] += 0.5 * h * (g_0 * self.disc_nodes[k] + g_x * dx)
            else:
                base[inner] += 0.5 * h * (g_0 + g_x)
        return base

    def _segments(self, batch: PathBatch):
        P = len(batch)
        counts = batch.n_jumps()
        starts = np.insert(batch.times, batch.offsets[:-1], batch.start)
        states = np.insert(batch.labels, batch.offsets[:-1], batch.initial)
        last = batch.offsets[1:] + np.arange(P)
        ends = np.append(starts[1:], np.inf)
        ends[last] = np.inf
        seg_path = np.repeat(np.arange(P), counts + 1)
        prev = np.delete(states, last)
        ev_path = np.repeat(np.arange(P), counts)
        return starts, ends, states, seg_path, prev, ev_path

    def _jump_totals(self, batch, prev, discounted=False):
        t = batch.times
        if len(t) == 0:
            return np.zeros(0)
        v = self.table.values_at(t)
        n = np.arange(len(t))
        total = v[n, batch.labels] - v[n, prev]
        for (j, k), f in self.table.spec.transition_payments.items():
            states = self.table.model.states
            if j in states and k in states:
                m = (prev == states.index(j)) & (batch.labels == states.index(k))
                total[m] += f.at(t[m])
        if discounted:
            total = total * np.exp(-np.asarray(self.table.kappa.log_accumulate(t)))
        return total

    def residuals(self, batch: PathBatch, grid, discounted: bool = False) -> np.ndarray:
        """Residual ``M(t)`` for every path (rows) and grid point (columns)."""
        grid = _grid(grid)
        T = self.table.spec.horizon
        starts, ends, states, seg_path, prev, ev_path = self._segments(batch)
        totals = self._jump_totals(batch, prev, discounted)
        P = len(batch)
        out = np.zeros((P, len(grid)))
        lo = self.cumulative(np.minimum(starts, T), states, discounted)
        for m, t in enumerate(grid):
            tt = min(t, T)
            hi_x = np.minimum(np.minimum(ends, tt), T)
            live = starts < tt
            comp = np.zeros(len(starts))
            if np.any(live):
                comp[live] = self.cumulative(hi_x[live], states[live], discounted) - lo[live]
            jumps = np.where(batch.times <= tt, totals, 0.0)
            out[:, m] = np.bincount(ev_path, weights=jumps, minlength=P) - np.bincount(seg_path, weights=comp, minlength=P)
        return out


def _batch_from_history(h: MppHistory, states: tuple) -> PathBatch:
    idx = {s: n for n, s in enumerate(states)}
    return PathBatch(
        states,
        np.zeros(1, dtype=np.int64),
        np.array([idx[h.initial.label]]),
        np.zeros(1),
        np.array([0, len(h.events)]),
        np.array(h.times, dtype=float),
        np.array([idx[m.label] for _, m in h.events], dtype=np.int64),
    )


def reconstruct_valid_reserve(h: MppHistory, model: IntensitySpec, spec: PaymentSpec,
                              kappa: AccumulationFunction, grid) -> tuple[np.ndarray, np.ndarray]:
    """Reserve rebuilt from its dynamics, and the tabulated reserve in the occupied state.

    ``V(t) = kappa(t) (V(0) - int_(0,t] dB / kappa + int_(0,t] dM / kappa)``.
    """
    table = reserve_table(model, spec, kappa)
    engine = ValidResiduals(table)
    grid = _grid(grid)
    batch = _batch_from_history(h, model.states)
    dm = engine.residuals(batch, grid, discounted=True)[0]
    ledger = valid_ledger(h, spec)
    v0 = table.value(h.initial.label, 0.0)
    rebuilt = np.array([
        kappa.accumulate(t) * (v0 - ledger.discounted_value(kappa, Interval(0.0, t, False, True)) + dm[n])
        for n, t in enumerate(grid)
    ])
    direct = np.array([table.value(h.label_at(t), t) for t in grid])
    return rebuilt, direct


def residual_path(path, model, spec: PaymentSpec, kappa: AccumulationFunction, grid, which: str = "valid") -> ResidualPath:
    grid_arr = _grid(grid)
    if which == "valid":
        if isinstance(model, TransactionModel):
            model = model.valid_time_spec
        if not isinstance(model, IntensitySpec) or not isinstance(path, MppHistory):
            raise TypeError("valid-time residuals need an IntensitySpec and an MppHistory")
        engine = ValidResiduals(reserve_table(model, spec, kappa))
        res = engine.residuals(_batch_from_history(path, model.states), grid_arr)[0]
        return ResidualPath(tuple(grid_arr), res)
    if which == "transaction":
        if not isinstance(model, TransactionModel) or not isinstance(path, TransactionTimeline):
            raise TypeError("transaction-time residuals need a TransactionModel and a TransactionTimeline")
        return ResidualPath(tuple(grid_arr), TransactionResiduals(model, spec, kappa).residuals(path, grid_arr))
    raise ValueError("which must be 'valid' or 'transaction'")


# ---------------------------------------------------------------- transaction time
class TransactionResiduals:
    """Residuals of the transaction-time reserve on the five-state example.

    The reserve while the origin ``j`` is presumed (onset ``theta``) is
    ``U_j(s) = sum_m p_jm(s) (V_m(s) + c_m(s))`` where ``c_m`` is the value at
    ``s`` of switching the believed origin from ``j`` to ``m`` over [theta, s].
    """

    def __init__(self, tmodel: TransactionModel, spec: PaymentSpec, kappa: AccumulationFunction):
        if not tmodel.conditional_independence:
            raise ValueError("transaction residuals are implemented for the conditional-independence model")
        if any(spec.atoms(s) for s in DISABLED):
            raise ValueError("sojourn atoms in disabled states are not supported here")
        self.tm, self.spec, self.kappa = tmodel, spec, kappa
        self.vt = reserve_table(tmodel.valid_time_spec, spec, kappa, tmodel.step)
        self.nodes = self.vt.nodes
        self.ext = tmodel.extended_spec
        self.H = [DiscountedCumulative(spec.rate(s), kappa) for s in DISABLED]
        self.T = spec.horizon

    # helpers -------------------------------------------------------------
    def _kap(self, x):
        return np.exp(np.asarray(self.kappa.log_accumulate(x)))

    def _p(self, x):
        """Posterior origin matrices at points ``x``: shape (n, 2, 2)."""
        sub, (s1, s2) = self.tm.origin_table
        a, b = s1.values_at(x), s2.values_at(x)
        out = np.empty((len(x), 2, 2))
        for j in range(2):
            tot = a[:, j] + b[:, j]
            out[:, j, 0] = a[:, j] / tot
            out[:, j, 1] = b[:, j] / tot
        return out

    def _rates(self, mid):
        c = self.ext.compiled
        i = np.searchsorted(c.breakpoints, mid, side="right") - 1
        return c.rates[i]

    def _b(self, j, k, x):
        return self.spec.transition(j, k).at(x)

    def _alpha(self, j, theta):
        """Per-path constant in the origin-switch value: c_m(x) = kappa(x) (alpha + H_m(x) - H_j(x))."""
        m = 1 - j
        atom = (self._b("a", DISABLED[m], theta) - self._b("a", DISABLED[j], theta)) / self._kap(theta)
        return float(atom - (self.H[m](theta) - self.H[j](theta)))

    def _corr(self, j, alpha, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((len(x), 2))
        m = 1 - j
        out[:, m] = self._kap(x) * (alpha + self.H[m](x) - self.H[j](x))
        return out

    def _U(self, p, v, corr):
        """Reserve per presumed origin l (n, 2), all measured against the same reference."""
        vi = v[:, 1:3] + corr
        return np.einsum("nlm,nm->nl", p, vi)

    # integrands ------------------------------------------------------------
    def _g_disabled(self, j, alpha, x, mid):
        v = self.vt.values_at(x)
        p = self._p(x)
        corr = self._corr(j, alpha, x)
        U = self._U(p, v, corr)
        lam = self._rates(mid)
        ij = 1 + j
        g = lam[:, ij, 1 + (1 - j)] * (U[:, 1 - j] - U[:, j])
        for k in range(2):
            ik = DISABLED[k]
            for dest, vcol, ext_col in (("r", 3, 3 + k), ("d", 4, 6 + k)):
                total = corr[:, k] + self._b(ik, dest, mid) + v[:, vcol] - U[:, j]
                g += lam[:, ij, ext_col] * total
        return g

    def _g_active(self, x, mid):
        v = self.vt.values_at(x)
        p = self._p(x)
        lam = self._rates(mid)
        g = lam[:, 0, 5] * (self._b("a", "d", mid) + v[:, 4] - v[:, 0])
        for j in range(2):
            u = sum(p[:, j, m] * (v[:, 1 + m] + self._b("a", DISABLED[m], mid)) for m in range(2))
            g += lam[:, 0, 1 + j] * (u - v[:, 0])
        return g

    def _g_reactivated(self, x, mid):
        v = self.vt.values_at(x)
        lam = self._rates(mid)
        return lam[:, 3, 6] * (self._b("r", "d", mid) + v[:, 4] - v[:, 3])

    @cached_property
    def _tables(self):
        nodes = self.nodes
        out = {"a": _NodeCumulative(self._g_active, nodes), "r": _NodeCumulative(self._g_reactivated, nodes)}
        for j in range(2):
            g0 = _NodeCumulative(lambda x, mid, j=j: self._g_disabled(j, 0.0, x, mid), nodes)
            g1 = _NodeCumulative(
                lambda x, mid, j=j: self._g_disabled(j, 1.0, x, mid) - self._g_disabled(j, 0.0, x, mid), nodes
            )
            out[DISABLED[j]] = (g0, g1)
        return out

    def _compensator(self, z, alpha, x):
        tab = self._tables.get(z)
        if tab is None:
            return np.zeros(len(x))
        if z in DISABLED:
            return tab[0].at(x) + alpha * tab[1].at(x)
        return tab.at(x)

    # main ------------------------------------------------------------------
    def residuals(self, tl: TransactionTimeline, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        T = self.T
        M = np.zeros(len(grid))
        z, theta, j, alpha = "a", None, None, 0.0
        hist = tl.initial_history
        s0 = 0.0
        stops = [(r.time, r) for r in tl.revisions] + [(T, None)]
        for time, rev in stops:
            s1 = min(time, T)
            if s1 > s0:
                gl = np.clip(grid, s0, s1)
                ends = self._compensator(z, alpha, np.concatenate(([s0], gl)))
                M -= ends[1:] - ends[0]
            if rev is None:
                if z in DISABLED and time >= T:
                    # settled at the horizon without a recorded change of origin
                    jump = self._jump_total(z, j, theta, alpha, RevisionEvent(T, z, hist), T)
                    M += np.where(grid >= T, jump, 0.0)
                break
            jump = self._jump_total(z, j, theta, alpha, rev, time)
            M += np.where(grid >= time, jump, 0.0)
            z_new = rev.z_state
            if z == "a" and z_new in DISABLED:
                theta = time
            if z_new in DISABLED:
                j = DISABLED.index(z_new)
                alpha = self._alpha(j, theta)
            z, s0, hist = z_new, s1, rev.revised_history
        return M

    def _jump_total(self, z, j, theta, alpha, rev, s) -> float:
        x = np.array([s])
        v = self.vt.values_at(min(s, self.T))[None, :]
        z_new = rev.z_state
        if z == "a":
            if z_new == "d":
                return float(self._b("a", "d", x)[0] + v[0, 4] - v[0, 0])
            jn = DISABLED.index(z_new)
            U = self._U(self._p(x), v, self._corr(jn, self._alpha(jn, s), x))
            return float(self._b("a", z_new, x)[0] + U[0, jn] - v[0, 0])
        if z == "r":
            return float(self._b("r", "d", x)[0] + v[0, 4] - v[0, 3])
        if z in DISABLED:
            corr = self._corr(j, alpha, x)
            U = self._U(self._p(x), v, corr)
            onset_label = [m.label for t, m in rev.revised_history.events if t == theta][0]
            k = DISABLED.index(onset_label)
            if z_new in DISABLED and s >= self.T:  # settlement at the horizon
                return float(corr[0, k] - U[0, j])
            if z_new in DISABLED:  # reclassification
                return float(U[0, k] - U[0, j])
            vcol = 3 if z_new == "r" else 4
            return float(corr[0, k] + self._b(DISABLED[k], z_new, x)[0] + v[0, vcol] - U[0, j])
        raise ValueError(f"unexpected revision from state {z!r}")


class _NodeCumulative:
    """Trapezoid integral of ``g(x, mid)`` from 0, exact at nodes, partial trapezoid in between."""

    def __init__(self, g, nodes):
        self.g, self.nodes = g, nodes
        mid = 0.5 * (nodes[:-1] + nodes[1:])
        self.mid = mid
        self.g_left = g(nodes[:-1], mid)
        g_right = g(nodes[1:], mid)
        self.cum = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(nodes) * (self.g_left + g_right))))

    def at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, len(self.nodes) - 1)
        out = self.cum[i].copy()
        inner = self.nodes[i] != x
        if np.any(inner):
            k = i[inner]
            out[inner] += 0.5 * (x[inner] - self.nodes[k]) * (self.g_left[k] + self.g(x[inner], self.mid[k]))
        return out


# ---------------------------------------------------------------- back-testing
@dataclass(frozen=True)
class BacktestReport:
    grid: tuple
    mean: np.ndarray
    std_error: np.ndarray
    inside: np.ndarray
    n_paths: int

    @property
    def fraction_inside(self) -> float:
        return float(np.mean(self.inside))


def _summarize(res: np.ndarray, grid) -> BacktestReport:
    n = res.shape[0]
    mean = res.mean(axis=0)
    se = res.std(axis=0, ddof=1) / math.sqrt(n)
    inside = np.abs(mean) <= 3.0 * se
    return BacktestReport(tuple(grid), mean, se, inside, n)


def backtest_residuals(model, spec: PaymentSpec, kappa: AccumulationFunction, grid, n: int, seed: int,
                       which: str = "valid", truth=None, initial: str | None = None, n_jobs: int = 1) -> BacktestReport:
    """Simulate ``n`` paths under ``truth`` (default: ``model``) and summarise their residuals under ``model``."""
    if n < 2:
        raise ValueError("need at least two paths")
    grid = _grid(grid)
    truth = model if truth is None else truth
    if which == "valid":
        if isinstance(model, TransactionModel):
            model = model.valid_time_spec
        if isinstance(truth, TransactionModel):
            truth = truth.valid_time_spec
        engine = ValidResiduals(reserve_table(model, spec, kappa))
        start = initial or model.states[0]
        batch = simulate_batch(truth, start, spec.horizon, seed, np.arange(n), n_jobs=n_jobs)
        return _summarize(engine.residuals(batch, grid), grid)
    if which == "transaction":
        engine = TransactionResiduals(model, spec, kappa)
        tls = truth.simulate_timelines(seed, n, n_jobs=n_jobs)
        return _summarize(np.array([engine.residuals(tl, grid) for tl in tls]), grid)
    raise ValueError("which must be 'valid' or 'transaction'")


RESIDUAL_COLUMNS = ("t", "mean", "std_error", "inside_3sigma")


def write_backtest(report: BacktestReport, stream: io.TextIOBase) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RESIDUAL_COLUMNS)
    for t, m, s, ok in zip(report.grid, report.mean, report.std_error, report.inside):
        w.writerow((format_time(t), repr(float(m)), repr(float(s)), "true" if ok else "false"))
