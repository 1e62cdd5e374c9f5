"""Command-line entry point.

Every command reads a JSON run configuration (``--config``) and writes CSV
output into ``--out`` (a directory, created if needed). Exit status is 0 on
success, 1 when the configuration is invalid and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from .bitemporal import (
    RevisionEvent,
    TimelineError,
    TransactionTimeline,
    export_records,
    import_records,
    read_records,
    validate_assumptions,
    write_records,
)
from .cashflow import write_ledger, transaction_ledger
from .config import ConfigError, check_config, load_config
from .dynamics import backtest_residuals, write_backtest
from .mpp import MppHistory, simulate_batch, write_histories
from .temporal import TimeGrid, format_time
from .valuation import (
    TimelineValuation,
    mc_reserve,
    rbns_reserve,
    statewise_reserve,
    ReserveEstimate,
    write_reserves,
)


class UsageError(Exception):
    """A run setting required by the command is missing from both flags and config."""


def _setting(args, cfg, name, default=None, required=False):
    value = getattr(args, name, None)
    if value is None:
        value = cfg.run.get(name, default)
    if value is None and required:
        raise UsageError(f"--{name.replace('_', '-')} or run.{name} is required")
    return value


def _grid(args, cfg):
    text = args.grid if args.grid is not None else cfg.run.get("grid")
    if text is None:
        return None
    return TimeGrid.parse(str(text))


def _times(args, cfg):
    grid = _grid(args, cfg)
    if grid is not None:
        return list(grid)
    return [float(cfg.run.get("t", 0.0))]


def _write(out: Path, name: str, writer) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer(buf)
    target = out / name
    target.write_text(buf.getvalue())
    print(target)
    return target


def _records_path(args, cfg):
    if args.records is not None:
        return Path(args.records)
    if "records" in cfg.run:
        return cfg.resolve(cfg.run["records"])
    return None


def _timelines(args, cfg, simulate_if_missing=True) -> list:
    """``(path_id, timeline)`` pairs from the record file, or freshly simulated ones."""
    path = _records_path(args, cfg)
    if path is not None:
        with open(path, newline="") as fh:
            rows = read_records(fh)
        if isinstance(rows, dict):
            return [(pid, import_records(r)) for pid, r in sorted(rows.items())]
        return [(0, import_records(rows))]
    if not simulate_if_missing:
        raise UsageError("--records or run.records is required")
    tmodel = cfg.transaction_model()
    seed = _setting(args, cfg, "seed", 0)
    n = _setting(args, cfg, "paths", None) or cfg.run.get("n_paths", 100)
    return list(enumerate(tmodel.simulate_timelines(seed, n, n_jobs=cfg.run.get("n_jobs", 1))))


def _observed(args, cfg) -> TransactionTimeline:
    if _records_path(args, cfg) is not None:
        return _timelines(args, cfg)[0][1]
    obs = cfg.run.get("observed")
    if obs is None:
        raise UsageError("run.observed or a record file is required")
    z = obs.get("z", "a")
    if z == "a":
        return TransactionTimeline("a")
    onset = float(obs["onset"])
    h = MppHistory.from_jumps("a", [(onset, z)])
    return TransactionTimeline("a", None, (RevisionEvent(onset, z, h),))


# ---------------------------------------------------------------- commands
def cmd_simulate(args, cfg, out):
    seed = _setting(args, cfg, "seed", 0)
    n = args.paths if args.paths is not None else cfg.run.get("n_paths", 100)
    jobs = cfg.run.get("n_jobs", 1)
    if cfg.has_transaction:
        tls = cfg.transaction_model().simulate_timelines(seed, n, n_jobs=jobs)
        _write(out, "histories.csv", lambda s: write_histories(((i, tl.finalized) for i, tl in enumerate(tls)), s))
        rows = [(i, r) for i, tl in enumerate(tls) for r in export_records(tl)]
        _write(out, "records.csv", lambda s: write_records(rows, s, with_path=True))
        return
    spec = cfg.payment_spec()
    initial = cfg.run.get("state", cfg.initial)
    batch = simulate_batch(cfg.intensity_spec(), initial, spec.horizon, seed, range(n), n_jobs=jobs)
    _write(out, "histories.csv", lambda s: write_histories(((i, batch.history(i)) for i in range(n)), s))


def cmd_export(args, cfg, out):
    tls = _timelines(args, cfg)
    rows = [(pid, r) for pid, tl in tls for r in export_records(tl)]
    if len(tls) == 1:
        _write(out, "records.csv", lambda s: write_records((r for _, r in rows), s))
    else:
        _write(out, "records.csv", lambda s: write_records(rows, s, with_path=True))


def _history_text(h: MppHistory) -> str:
    return ";".join([h.initial.label] + [f"{format_time(t)}:{m.label}" for t, m in h.events])


def cmd_import(args, cfg, out):
    tls = _timelines(args, cfg, simulate_if_missing=False)

    def revisions(s):
        w = csv.writer(s, lineterminator="\n")
        w.writerow(("path_id", "time", "z_state", "history"))
        for pid, tl in tls:
            w.writerow((pid, format_time(0.0), tl.initial_z, _history_text(tl.initial_history)))
            for r in tl.revisions:
                w.writerow((pid, format_time(r.time), r.z_state, _history_text(r.revised_history)))

    _write(out, "revisions.csv", revisions)
    _write(out, "histories.csv", lambda s: write_histories(((pid, tl.finalized) for pid, tl in tls), s))


def cmd_value(args, cfg, out):
    spec, kappa = cfg.payment_spec(), cfg.kappa()
    tls = _timelines(args, cfg)
    times = _times(args, cfg)

    def values(s):
        w = csv.writer(s, lineterminator="\n")
        w.writerow(("path_id", "t", "pv_valid", "pv_transaction", "correction", "correction_telescoped"))
        for pid, tl in tls:
            tv = TimelineValuation(tl, spec, kappa)
            for t in times:
                rep = tv.report(t)
                w.writerow((pid, format_time(t), repr(rep.pv_valid), repr(rep.pv_transaction),
                            repr(rep.correction), repr(rep.correction_telescoped)))

    _write(out, "values.csv", values)
    if len(tls) == 1:
        _write(out, "ledger.csv", lambda s: write_ledger(transaction_ledger(tls[0][1], spec, kappa), s))


def cmd_reserve(args, cfg, out):
    spec, kappa = cfg.payment_spec(), cfg.kappa()
    times = _times(args, cfg)
    method = args.method
    rows = []
    if method == "statewise":
        model = cfg.transaction_model().valid_time_spec if cfg.has_transaction else cfg.intensity_spec()
        state = cfg.run.get("state", cfg.initial)
        rows = [(t, ReserveEstimate(statewise_reserve(model, spec, kappa, state, t), "ode")) for t in times]
    elif method == "rbns":
        tmodel = cfg.transaction_model()
        observed = _observed(args, cfg)
        rows = [(t, rbns_reserve(tmodel, spec, kappa, observed, t)) for t in times]
    else:
        seed = _setting(args, cfg, "seed", 0)
        n = args.paths if args.paths is not None else cfg.run.get("n_paths", 10000)
        mode = cfg.run.get("mode", "restart")
        jobs = cfg.run.get("n_jobs", 1)
        if cfg.has_transaction and (cfg.run.get("observed") is not None or _records_path(args, cfg) is not None):
            model, cond = cfg.transaction_model(), _observed(args, cfg)
        else:
            model, cond = cfg.intensity_spec(), cfg.run.get("state", cfg.initial)
        rows = [(t, mc_reserve(model, spec, kappa, cond, t, n, seed, mode=mode, n_jobs=jobs)) for t in times]
    _write(out, "reserves.csv", lambda s: write_reserves(rows, s))


def cmd_validate(args, cfg, out):
    path = _records_path(args, cfg)
    if path is None:
        raise UsageError("--records or run.records is required")
    with open(path, newline="") as fh:
        rows = read_records(fh)
    groups = sorted(rows.items()) if isinstance(rows, dict) else [(None, rows)]
    lines = []
    for pid, recs in groups:
        prefix = "" if pid is None else f"path {pid}: "
        report = validate_assumptions(recs)
        lines.extend(prefix + line for line in report.lines())
        if report.ok:
            lines.append(prefix + "ok")
    for line in lines:
        print(line)
    _write(out, "validation.txt", lambda s: s.write("".join(line + "\n" for line in lines)))


def cmd_residuals(args, cfg, out):
    spec, kappa = cfg.payment_spec(), cfg.kappa()
    grid = _grid(args, cfg)
    if grid is None:
        raise UsageError("--grid or run.grid is required")
    which = cfg.run.get("which", "valid")
    model = cfg.transaction_model() if cfg.has_transaction else cfg.intensity_spec()
    seed = _setting(args, cfg, "seed", 0)
    n = args.paths if args.paths is not None else cfg.run.get("n_paths", 1000)
    report = backtest_residuals(model, spec, kappa, grid, n, seed, which=which,
                                initial=cfg.run.get("state"), n_jobs=cfg.run.get("n_jobs", 1))
    _write(out, "residuals.csv", lambda s: write_backtest(report, s))


COMMANDS = {
    "simulate": cmd_simulate,
    "export-bitemporal": cmd_export,
    "import-bitemporal": cmd_import,
    "value": cmd_value,
    "reserve": cmd_reserve,
    "validate": cmd_validate,
    "residuals": cmd_residuals,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitemporal", description="Bi-temporal insurance cash flows and reserves.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["check-config"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        if name == "check-config":
            continue
        p.add_argument("--out", default=".", help="output directory (default: current directory)")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.add_argument("--paths", type=int, help="overrides run.n_paths")
        p.add_argument("--grid", help="time grid 't0:t1:n' (n points), overrides run.grid")
        p.add_argument("--records", help="bi-temporal record CSV, overrides run.records")
        if name == "reserve":
            p.add_argument("--method", choices=("statewise", "rbns", "monte-carlo"), default="statewise")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "check-config":
        try:
            problems = check_config(args.config)
        except OSError as exc:
            print(f"cannot read config: {exc}", file=sys.stderr)
            return 1
        for p in problems:
            print(p)
        if not problems:
            print("ok")
        return 1 if problems else 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args, cfg, Path(args.out))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, TimelineError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
