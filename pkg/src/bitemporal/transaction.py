"""Five-state disability model with uncertain origin, seen in transaction time.

The observable chain moves between ``a``, ``i1``, ``i2``, ``r`` and ``d``; the
disability origin may be reclassified (``i1 <-> i2``) while disabled. For
simulation it is run on an extended chain whose absorbing states remember the
final origin: ``a, i1, i2, r1, r2, d0, d1, d2``.

With ``conditional_independence=True`` (the default) the exit intensities
from a presumed origin ``j`` are split by final origin ``k`` as
``C_jk(t) * rho_k`` and ``C_jk(t) * mu_k``, where ``C(t)`` is the posterior
origin matrix. ``C`` solves a backward Riccati equation with ``C(T) = G``,
the settlement matrix. Under this construction the reclassification history
carries no information about the future beyond the presumed origin, and the
induced valid-time process is Markov. With ``conditional_independence=False``
the origin at exit is simply the presumed one.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .bitemporal import RevisionEvent, TransactionTimeline
from .mpp import IntensitySpec, Mark, MppHistory, PathBatch, simulate_batch
from .ode import DEFAULT_STEP, BackwardSolution, augment, time_nodes
from .rng import STREAM_JUMPS, STREAM_SETTLEMENT, uniforms
from .temporal import PiecewiseConstant

LABELS = ("a", "i1", "i2", "r", "d")
DISABLED = ("i1", "i2")
EXTENDED = ("a", "i1", "i2", "r1", "r2", "d0", "d1", "d2")
_EXT_INDEX = {s: n for n, s in enumerate(EXTENDED)}


def _pc(x) -> PiecewiseConstant:
    return PiecewiseConstant.from_segments(x)


def _pair(x):
    a, b = x
    return (_pc(a), _pc(b))


@dataclass(frozen=True)
class TransactionModel:
    onset: tuple  # reported-origin onset intensities (a -> i1, a -> i2)
    active_mortality: object
    flips: tuple  # (i1 -> i2, i2 -> i1)
    reactivation: tuple  # (i1 -> r, i2 -> r) by true origin
    disabled_mortality: tuple  # (i1 -> d, i2 -> d) by true origin
    reactivated_mortality: object
    horizon: float
    misclassification: tuple = ((1.0, 0.0), (0.0, 1.0))
    conditional_independence: bool = True
    step: float = DEFAULT_STEP

    def __post_init__(self):
        object.__setattr__(self, "onset", _pair(self.onset))
        object.__setattr__(self, "flips", _pair(self.flips))
        object.__setattr__(self, "reactivation", _pair(self.reactivation))
        object.__setattr__(self, "disabled_mortality", _pair(self.disabled_mortality))
        object.__setattr__(self, "active_mortality", _pc(self.active_mortality))
        object.__setattr__(self, "reactivated_mortality", _pc(self.reactivated_mortality))
        g = tuple(tuple(float(x) for x in row) for row in self.misclassification)
        if len(g) != 2 or any(len(row) != 2 for row in g):
            raise ValueError("misclassification must be a 2x2 matrix")
        if any(x < 0 for row in g for x in row) or any(abs(sum(row) - 1.0) > 1e-12 for row in g):
            raise ValueError("misclassification rows must be probability vectors")
        object.__setattr__(self, "misclassification", g)
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        object.__setattr__(self, "horizon", float(self.horizon))
        for f in self._all_rates():
            if not f.is_nonnegative():
                raise ValueError("intensities must be non-negative")

    def _all_rates(self):
        return [*self.onset, self.active_mortality, *self.flips, *self.reactivation,
                *self.disabled_mortality, self.reactivated_mortality]

    @classmethod
    def from_intensities(cls, spec: IntensitySpec, flips, horizon, misclassification=((1, 0), (0, 1)),
                         conditional_independence=True, step=DEFAULT_STEP) -> "TransactionModel":
        """Read the five-state intensities off an ``IntensitySpec`` over ``a, i1, i2, r, d``."""
        missing = set(LABELS) - set(spec.states)
        if missing:
            raise ValueError(f"transaction model needs states {LABELS}; missing {sorted(missing)}")
        allowed = {("a", "i1"), ("a", "i2"), ("a", "d"), ("i1", "r"), ("i2", "r"), ("i1", "d"), ("i2", "d"), ("r", "d")}
        extra = set(spec.rates) - allowed
        if extra:
            raise ValueError(f"unsupported transitions for the transaction model: {sorted(extra)}")
        r = spec.rate
        return cls(
            onset=(r("a", "i1"), r("a", "i2")),
            active_mortality=r("a", "d"),
            flips=flips,
            reactivation=(r("i1", "r"), r("i2", "r")),
            disabled_mortality=(r("i1", "d"), r("i2", "d")),
            reactivated_mortality=r("r", "d"),
            horizon=horizon,
            misclassification=misclassification,
            conditional_independence=conditional_independence,
            step=step,
        )

    # ------------------------------------------------------------------ grids
    @cached_property
    def nodes(self) -> np.ndarray:
        extra = set()
        for f in self._all_rates():
            extra.update(f.breakpoints)
        return time_nodes(self.horizon, self.step, sorted(extra))

    @cached_property
    def _step_rates(self) -> dict:
        mid = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        return {
            "nu12": self.flips[0].at(mid), "nu21": self.flips[1].at(mid),
            "rho1": self.reactivation[0].at(mid), "rho2": self.reactivation[1].at(mid),
            "mu1": self.disabled_mortality[0].at(mid), "mu2": self.disabled_mortality[1].at(mid),
        }

    @cached_property
    def posterior(self) -> np.ndarray:
        """Posterior origin matrix ``C`` at the nodes, shape (N+1, 2, 2).

        Rows sum to one, so only ``p_j = C_j1`` is integrated:
        ``dp_j/dt = -sum_l nu_jl (p_l - p_j) + p_j (1 - p_j)(phi_2 - phi_1)``.
        """
        nodes = self.nodes
        N = len(nodes) - 1
        g = self.misclassification
        p1, p2 = np.empty(N + 1), np.empty(N + 1)
        p1[N], p2[N] = g[0][0], g[1][0]
        sr = self._step_rates
        nu12, nu21 = sr["nu12"].tolist(), sr["nu21"].tolist()
        dphi = (sr["rho2"] + sr["mu2"] - sr["rho1"] - sr["mu1"]).tolist()
        hs = np.diff(nodes).tolist()
        x, y = p1[N], p2[N]
        for i in range(N - 1, -1, -1):
            a, b, c, h = nu12[i], nu21[i], dphi[i], -hs[i]

            def f(x, y):
                return -a * (y - x) + x * (1 - x) * c, -b * (x - y) + y * (1 - y) * c

            k1x, k1y = f(x, y)
            k2x, k2y = f(x + 0.5 * h * k1x, y + 0.5 * h * k1y)
            k3x, k3y = f(x + 0.5 * h * k2x, y + 0.5 * h * k2y)
            k4x, k4y = f(x + h * k3x, y + h * k3y)
            x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            y += h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
            p1[i], p2[i] = x, y
        out = np.empty((N + 1, 2, 2))
        out[:, 0, 0], out[:, 0, 1] = p1, 1 - p1
        out[:, 1, 0], out[:, 1, 1] = p2, 1 - p2
        return out

    @cached_property
    def step_posterior(self) -> np.ndarray:
        """Per-step posterior (average of the two end nodes), shape (N, 2, 2)."""
        if not self.conditional_independence:
            return np.broadcast_to(np.eye(2), (len(self.nodes) - 1, 2, 2))
        c = self.posterior
        return 0.5 * (c[:-1] + c[1:])

    def _on_nodes(self, values) -> PiecewiseConstant:
        return PiecewiseConstant(tuple(self.nodes[:-1]), tuple(np.asarray(values).tolist()))

    # ------------------------------------------------------------------ chains
    @cached_property
    def extended_spec(self) -> IntensitySpec:
        c = self.step_posterior
        sr = self._step_rates
        rates = {
            ("a", "i1"): self.onset[0], ("a", "i2"): self.onset[1], ("a", "d0"): self.active_mortality,
            ("i1", "i2"): self.flips[0], ("i2", "i1"): self.flips[1],
            ("r1", "d1"): self.reactivated_mortality, ("r2", "d2"): self.reactivated_mortality,
        }
        for j in range(2):
            for k in range(2):
                rho, mu = sr[f"rho{k + 1}"], sr[f"mu{k + 1}"]
                rates[(f"i{j + 1}", f"r{k + 1}")] = self._on_nodes(c[:, j, k] * rho)
                rates[(f"i{j + 1}", f"d{k + 1}")] = self._on_nodes(c[:, j, k] * mu)
        return IntensitySpec(EXTENDED, rates)

    @cached_property
    def valid_time_spec(self) -> IntensitySpec:
        """Markov intensities of the true (valid-time) process on ``a, i1, i2, r, d``."""
        if not self.conditional_independence:
            raise ValueError("the valid-time process is Markov only under conditional independence")
        c = self.step_posterior
        mid = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        l1, l2 = self.onset[0].at(mid), self.onset[1].at(mid)
        rates = {
            ("a", "i1"): self._on_nodes(l1 * c[:, 0, 0] + l2 * c[:, 1, 0]),
            ("a", "i2"): self._on_nodes(l1 * c[:, 0, 1] + l2 * c[:, 1, 1]),
            ("a", "d"): self.active_mortality,
            ("i1", "r"): self.reactivation[0], ("i2", "r"): self.reactivation[1],
            ("i1", "d"): self.disabled_mortality[0], ("i2", "d"): self.disabled_mortality[1],
            ("r", "d"): self.reactivated_mortality,
        }
        return IntensitySpec(LABELS, rates)

    @cached_property
    def origin_table(self) -> tuple:
        """Absorption probabilities of ending with origin 1, on states i1, i2, r1, r2, d1, d2."""
        sub = ("i1", "i2", "r1", "r2", "d1", "d2")
        spec = self.extended_spec
        c = spec.compiled
        nodes = self.nodes
        mid = 0.5 * (nodes[:-1] + nodes[1:])
        idx = np.searchsorted(c.breakpoints, mid, side="right") - 1
        full = [spec.index(s) for s in sub]
        q = c.rates[idx][:, full][:, :, full]
        q[:, np.arange(6), np.arange(6)] -= c.totals[idx][:, full]
        g = self.misclassification
        solutions = []
        for k in range(2):
            terminal = np.array([g[0][k], g[1][k], k == 0, k == 1, k == 0, k == 1], dtype=float)
            solutions.append(BackwardSolution(nodes, augment(-q, np.zeros((len(mid), 6))), terminal))
        return sub, solutions

    def origin_probabilities(self, z_now: str, t: float) -> tuple[float, float]:
        if z_now not in DISABLED:
            raise ValueError(f"origin probabilities need a disabled state, got {z_now!r}")
        sub, (s1, s2) = self.origin_table
        i = sub.index(z_now)
        p1 = float(s1.values_at(t)[i])
        p2 = float(s2.values_at(t)[i])
        total = p1 + p2
        return p1 / total, p2 / total

    # ------------------------------------------------------------------ simulation
    def settle(self, presumed: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Final origin index (0 or 1) for paths still disabled at the horizon."""
        g = np.asarray(self.misclassification)
        return np.where(u < g[presumed, 0], 0, 1)

    def simulate_extended(self, seed: int, paths, initial="a", start=0.0, n_jobs: int = 1) -> PathBatch:
        return simulate_batch(self.extended_spec, initial, self.horizon, seed, paths, start=start,
                              stream=STREAM_JUMPS, n_jobs=n_jobs)

    def simulate_timelines(self, seed: int, n: int, first_path: int = 0, n_jobs: int = 1) -> list:
        paths = np.arange(first_path, first_path + n)
        batch = self.simulate_extended(seed, paths, n_jobs=n_jobs)
        u, _ = uniforms(seed, STREAM_SETTLEMENT, paths, 0)
        if n_jobs > 1:
            with ThreadPoolExecutor(n_jobs) as pool:
                return list(pool.map(lambda i: self._timeline(batch, i, u[i]), range(n)))
        return [self._timeline(batch, i, u[i]) for i in range(n)]

    def simulate_timeline(self, seed: int, path: int = 0):
        return self.simulate_timelines(seed, 1, first_path=path)[0]

    def _timeline(self, batch: PathBatch, i: int, u_settle: float) -> TransactionTimeline:
        T = self.horizon
        hist = MppHistory(Mark("a"))
        revisions = []
        onset = None
        z = "a"
        for t, lab in batch.events(i):
            if lab in DISABLED:
                if z == "a":
                    hist = hist.append(t, lab)
                    onset = len(hist.events) - 1
                else:
                    hist = hist.relabel(onset, lab)
                z = lab
            elif lab in ("r1", "r2"):
                hist = hist.relabel(onset, "i" + lab[1]).append(t, "r")
                z = "r"
            elif lab == "d0" or z == "r":
                hist = hist.append(t, "d")
                z = "d"
            else:  # d1 / d2 from a disabled state
                hist = hist.relabel(onset, "i" + lab[1]).append(t, "d")
                z = "d"
            revisions.append(RevisionEvent(t, z, hist))
        if z not in DISABLED:
            return TransactionTimeline("a", None, tuple(revisions))
        # still disabled at the horizon: the origin is settled at T, and a
        # revision is recorded only when the settled origin differs
        k = int(self.settle(np.array([DISABLED.index(z)]), np.array([u_settle]))[0])
        if DISABLED[k] != z:
            hist = hist.relabel(onset, DISABLED[k])
            z = DISABLED[k]
            if revisions and revisions[-1].time >= T:
                revisions[-1] = RevisionEvent(revisions[-1].time, z, hist)
            else:
                revisions.append(RevisionEvent(T, z, hist))
        return TransactionTimeline("a", None, tuple(revisions), absorption=max(T, revisions[-1].time))
