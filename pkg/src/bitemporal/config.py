"""JSON run configuration: parsing, semantic checks with line numbers, and model construction."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from json.decoder import scanstring
from pathlib import Path

from .cashflow import PaymentSpec
from .mpp import IntensitySpec
from .temporal import AccumulationFunction, PiecewiseConstant, TimeGrid
from .transaction import LABELS, TransactionModel


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = problems
        super().__init__("\n".join(str(p) for p in problems))


@dataclass(frozen=True)
class ConfigProblem:
    source: str
    line: int
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.source}:{self.line}: {self.path or '<root>'}: {self.message}"


# ---------------------------------------------------------------- locating values
_WS = re.compile(r"[ \t\n\r]*")
_SCALAR = re.compile(r"-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][-+]?\d+)?|true|false|null")


def value_lines(text: str) -> dict:
    """Map each JSON value path (tuple of keys / indices) to the line where it starts."""
    lines: dict = {}

    def line_of(pos):
        return text.count("\n", 0, pos) + 1

    def skip(pos):
        return _WS.match(text, pos).end()

    def value(pos, path):
        pos = skip(pos)
        lines[path] = line_of(pos)
        ch = text[pos:pos + 1]
        if ch == "{":
            pos = skip(pos + 1)
            if text[pos:pos + 1] == "}":
                return pos + 1
            while True:
                pos = skip(pos)
                key, pos = scanstring(text, pos + 1)
                pos = skip(pos)
                pos = value(pos + 1, path + (key,))
                pos = skip(pos)
                if text[pos] == ",":
                    pos += 1
                    continue
                return pos + 1
        if ch == "[":
            pos = skip(pos + 1)
            if text[pos:pos + 1] == "]":
                return pos + 1
            n = 0
            while True:
                pos = value(pos, path + (n,))
                pos = skip(pos)
                n += 1
                if text[pos] == ",":
                    pos += 1
                    continue
                return pos + 1
        if ch == '"':
            return scanstring(text, pos + 1)[1]
        m = _SCALAR.match(text, pos)
        return m.end()

    value(0, ())
    return lines


# ---------------------------------------------------------------- checks
@dataclass
class _Checker:
    source: str
    lines: dict
    problems: list = field(default_factory=list)

    def add(self, path, message):
        line = 1
        for cut in range(len(path), -1, -1):
            if tuple(path[:cut]) in self.lines:
                line = self.lines[tuple(path[:cut])]
                break
        dotted = ".".join(str(p) if isinstance(p, str) else f"[{p}]" for p in path).replace(".[", "[")
        self.problems.append(ConfigProblem(self.source, line, dotted, message))

    def number(self, obj, path, minimum=None, strict=False, required=True):
        if obj is None:
            if required:
                self.add(path, "missing value")
            return None
        if isinstance(obj, bool) or not isinstance(obj, (int, float)) or not math.isfinite(obj):
            self.add(path, "must be a finite number")
            return None
        if minimum is not None and (obj < minimum or (strict and obj == minimum)):
            self.add(path, f"must be {'>' if strict else '>='} {minimum}")
            return None
        return obj

    def rate_like(self, obj, path, nonneg):
        """A number or a list of ``{"from": t, "rate": x}`` segments."""
        if isinstance(obj, list):
            for n, seg in enumerate(obj):
                if not isinstance(seg, dict):
                    self.add(path + (n,), "segment must be an object")
                    continue
                self.number(seg.get("from"), path + (n, "from"), minimum=0.0)
                key = "rate" if "rate" in seg else "amount"
                self.number(seg.get(key), path + (n, key), minimum=0.0 if nonneg else None)
            return
        self.number(obj, path, minimum=0.0 if nonneg else None)

    def state(self, label, states, path):
        if label not in states:
            self.add(path, f"undeclared state {label!r}")


def _check(data, source, text) -> list:
    c = _Checker(source, value_lines(text))
    if not isinstance(data, dict):
        c.add((), "top level must be an object")
        return c.problems
    for key in data:
        if key not in ("model", "payments", "interest", "run"):
            c.add((key,), "unknown section")
    model = data.get("model")
    states = []
    if not isinstance(model, dict):
        c.add(("model",), "missing or not an object")
    else:
        states = model.get("states")
        if not isinstance(states, list) or not states or not all(isinstance(s, str) for s in states):
            c.add(("model", "states"), "must be a non-empty list of labels")
            states = []
        elif len(set(states)) != len(states):
            c.add(("model", "states"), "duplicate labels")
        if "initial" in model:
            c.state(model["initial"], states, ("model", "initial"))
        for n, item in enumerate(model.get("intensities", [])):
            p = ("model", "intensities", n)
            if not isinstance(item, dict):
                c.add(p, "must be an object")
                continue
            c.state(item.get("from"), states, p + ("from",))
            c.state(item.get("to"), states, p + ("to",))
            if item.get("from") == item.get("to"):
                c.add(p, "from and to must differ")
            key = "segments" if "segments" in item else "rate"
            c.rate_like(item.get(key), p + (key,), nonneg=True)
        tr = model.get("transaction")
        if tr is not None:
            p = ("model", "transaction")
            if not isinstance(tr, dict):
                c.add(p, "must be an object")
            else:
                missing = [s for s in LABELS if s not in states]
                if missing:
                    c.add(("model", "states"), f"transaction model needs states {', '.join(missing)}")
                for n, item in enumerate(tr.get("flips", [])):
                    q = p + ("flips", n)
                    if item.get("from") not in ("i1", "i2") or item.get("to") not in ("i1", "i2") or item.get("from") == item.get("to"):
                        c.add(q, "flips must go between i1 and i2")
                    key = "segments" if "segments" in item else "rate"
                    c.rate_like(item.get(key), q + (key,), nonneg=True)
                g = tr.get("misclassification", [[1, 0], [0, 1]])
                if (not isinstance(g, list) or len(g) != 2 or any(not isinstance(r, list) or len(r) != 2 for r in g)):
                    c.add(p + ("misclassification",), "must be a 2x2 matrix")
                else:
                    for n, row in enumerate(g):
                        ok = all(c.number(x, p + ("misclassification", n, m), minimum=0.0) is not None for m, x in enumerate(row))
                        if ok and abs(sum(row) - 1.0) > 1e-12:
                            c.add(p + ("misclassification", n), "row must sum to 1")
                ci = tr.get("conditional_independence", True)
                if not isinstance(ci, bool):
                    c.add(p + ("conditional_independence",), "must be true or false")
    pay = data.get("payments")
    if not isinstance(pay, dict):
        c.add(("payments",), "missing or not an object")
    else:
        c.number(pay.get("horizon"), ("payments", "horizon"), minimum=0.0, strict=True)
        for key in ("sojourn_rates", "duration_rates"):
            for state, f in pay.get(key, {}).items():
                c.state(state, states, ("payments", key, state))
                c.rate_like(f, ("payments", key, state), nonneg=False)
        for state, lst in pay.get("sojourn_atoms", {}).items():
            c.state(state, states, ("payments", "sojourn_atoms", state))
            for n, at in enumerate(lst):
                c.number(at.get("time"), ("payments", "sojourn_atoms", state, n, "time"), minimum=0.0)
                c.number(at.get("amount"), ("payments", "sojourn_atoms", state, n, "amount"))
        for n, item in enumerate(pay.get("transition_payments", [])):
            p = ("payments", "transition_payments", n)
            c.state(item.get("from"), states, p + ("from",))
            c.state(item.get("to"), states, p + ("to",))
            key = "segments" if "segments" in item else "amount"
            c.rate_like(item.get(key), p + (key,), nonneg=False)
    interest = data.get("interest", {})
    if not isinstance(interest, dict):
        c.add(("interest",), "must be an object")
    else:
        c.rate_like(interest.get("force", 0.0), ("interest", "force"), nonneg=False)
    run = data.get("run", {})
    if not isinstance(run, dict):
        c.add(("run",), "must be an object")
    else:
        if "seed" in run and (not isinstance(run["seed"], int) or isinstance(run["seed"], bool) or run["seed"] < 0):
            c.add(("run", "seed"), "must be a non-negative integer")
        if "n_paths" in run and (not isinstance(run["n_paths"], int) or isinstance(run["n_paths"], bool) or run["n_paths"] < 1):
            c.add(("run", "n_paths"), "must be a positive integer")
        if "grid" in run:
            try:
                TimeGrid.parse(str(run["grid"]))
            except ValueError as exc:
                c.add(("run", "grid"), str(exc))
        if "t" in run:
            c.number(run["t"], ("run", "t"), minimum=0.0)
        if "state" in run:
            c.state(run["state"], states, ("run", "state"))
        obs = run.get("observed")
        if obs is not None:
            if not isinstance(obs, dict):
                c.add(("run", "observed"), "must be an object")
            else:
                if "z" in obs:
                    c.state(obs["z"], states, ("run", "observed", "z"))
                if "onset" in obs:
                    c.number(obs["onset"], ("run", "observed", "onset"), minimum=0.0, strict=True)
        if "mode" in run and run["mode"] not in ("restart", "reject"):
            c.add(("run", "mode"), "must be 'restart' or 'reject'")
        if "which" in run and run["which"] not in ("valid", "transaction"):
            c.add(("run", "which"), "must be 'valid' or 'transaction'")
    return c.problems


# ---------------------------------------------------------------- objects
@dataclass
class RunConfig:
    data: dict
    path: Path

    @property
    def run(self) -> dict:
        return self.data.get("run", {})

    @property
    def states(self) -> tuple:
        return tuple(self.data["model"]["states"])

    @property
    def initial(self) -> str:
        return self.data["model"].get("initial", self.states[0])

    def resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.path.parent / p

    def intensity_spec(self) -> IntensitySpec:
        rates = {}
        for item in self.data["model"].get("intensities", []):
            rates[(item["from"], item["to"])] = _function(item, "rate")
        return IntensitySpec(self.states, rates)

    @property
    def has_transaction(self) -> bool:
        return "transaction" in self.data["model"]

    def transaction_model(self) -> TransactionModel:
        tr = self.data["model"].get("transaction")
        if tr is None:
            raise ValueError("config has no model.transaction section")
        flips = {("i1", "i2"): 0.0, ("i2", "i1"): 0.0}
        for item in tr.get("flips", []):
            flips[(item["from"], item["to"])] = _function(item, "rate")
        return TransactionModel.from_intensities(
            self.intensity_spec(),
            flips=(flips[("i1", "i2")], flips[("i2", "i1")]),
            horizon=self.data["payments"]["horizon"],
            misclassification=tr.get("misclassification", ((1, 0), (0, 1))),
            conditional_independence=tr.get("conditional_independence", True),
        )

    def payment_spec(self) -> PaymentSpec:
        pay = self.data["payments"]
        return PaymentSpec(
            self.states,
            pay["horizon"],
            {s: PiecewiseConstant.from_segments(f) for s, f in pay.get("sojourn_rates", {}).items()},
            {s: [(a["time"], a["amount"]) for a in lst] for s, lst in pay.get("sojourn_atoms", {}).items()},
            {(i["from"], i["to"]): _function(i, "amount") for i in pay.get("transition_payments", [])},
            {s: PiecewiseConstant.from_segments(f) for s, f in pay.get("duration_rates", {}).items()},
        )

    def kappa(self) -> AccumulationFunction:
        return AccumulationFunction(PiecewiseConstant.from_segments(self.data.get("interest", {}).get("force", 0.0)))


def _function(item: dict, key: str) -> PiecewiseConstant:
    if "segments" in item:
        return PiecewiseConstant.from_segments(item["segments"])
    return PiecewiseConstant.from_segments(item[key])


def check_config(path) -> list:
    """All problems found in the file at ``path`` (empty when valid)."""
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        return [ConfigProblem(str(path), exc.lineno, "", f"invalid JSON: {exc.msg}")]
    return _check(data, str(path), text)


def load_config(path) -> RunConfig:
    path = Path(path)
    problems = check_config(path)
    if problems:
        raise ConfigError(problems)
    return RunConfig(json.loads(path.read_text()), path)
