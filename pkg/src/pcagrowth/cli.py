"""Command line entry point: simulate, steady, analyze, verify, sweep.

Exit codes: 0 success, 1 an asserted check failed, 2 configuration error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .config import dump_config, load_config, load_sweep_axis
from .errors import ConfigError, SolverError
from .grid import Grid, norm_l2, write_snapshot
from .stepper import SERIES_COLUMNS, RunReport, dt_max, initial_state, integrate, sigma_tilde
from .steady import gamma_minimize, steady_closed_form, steady_solve_discrete

log = logging.getLogger("pcagrowth")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

REPORT_COLUMNS = ("kind", "name", "value", "passed", "asserted", "detail")


def fmt(x) -> str:
    """Round-trip decimal for floats; non-finite values are never written."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return ""
        return repr(x)
    return str(x)


def _overrides(args) -> list:
    items = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        items.append(f"run.seed={args.seed}")
    if getattr(args, "clamp", False):
        items.append("run.clamp=true")
    return items


def _load(args):
    text = Path(args.config).read_text()
    return text, load_config(text, _overrides(args))


# -- series I/O ------------------------------------------------------------------

class SeriesWriter:
    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(SERIES_COLUMNS)

    def __call__(self, row):
        vals = [row[c] for c in SERIES_COLUMNS]
        if not all(math.isfinite(v) for v in vals):
            raise SolverError(f"non-finite value in sample at t={row['t']}")
        self.w.writerow([fmt(v) for v in vals])

    def close(self):
        self.fh.close()


def read_series(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty series")
    missing = [c for c in SERIES_COLUMNS if c not in rows[0]]
    if missing:
        raise ConfigError(f"{path}: missing columns {missing}")
    return {c: np.array([float(r[c]) for r in rows]) for c in SERIES_COLUMNS}


def report_from_series(series: dict, params, schedule, run) -> RunReport:
    """Rebuild a report from a logged series; bound violations only at logged samples."""
    st = sigma_tilde(params)
    t = series["t"]
    rep = RunReport(
        series=series, dt=float(np.min(np.diff(t))) if len(t) > 1 else run.dt, t_end=float(t[-1]),
        dt_max=dt_max(params, schedule), sigma_tilde=st,
        nutrient_hypotheses=bool(schedule.s_le_Sc and series["min_sigma"][0] >= 0
                                 and series["max_sigma"][0] <= st),
        psa_hypotheses=bool(schedule.s_le_Sc and series["min_sigma"][0] >= 0 and series["min_p"][0] >= 0),
    )
    rep.max_violation = {
        "phi": float(max(0.0, -series["min_phi"].min(), series["max_phi"].max() - 1)),
        "sigma": float(max(0.0, -series["min_sigma"].min(), series["max_sigma"].max() - st)),
        "p": float(max(0.0, -series["min_p"].min())),
    }
    return rep


def write_report(path, report: RunReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow(["info", "rng", report.rng, "", "", ""])
        w.writerow(["info", "conforming", fmt(report.conforming), "", "", "clamp mode off" if report.conforming
                    else "clamp mode on: bounds enforced by clipping"])
        w.writerow(["info", "f_sup_scope", "a priori box", "", "",
                    "sup of |f| over 0<=phi<=1, tilt range, |u|<=u_sup"])
        for name, v in report.predicted.items():
            w.writerow(["predicted", name, fmt(v), "", "", ""])
        for name, v in report.fitted.items():
            w.writerow(["fitted", name, fmt(v), "", "", ""])
        for name, v in report.max_violation.items():
            w.writerow(["violation", name, fmt(v), "", "", str(report.violation_where.get(name) or "")])
        for k, (t0, v) in enumerate(report.dphi_windows):
            w.writerow(["window", f"phi_t_sq[{fmt(t0)},{fmt(t0 + 1)}]", fmt(v), "", "", ""])
        for c in report.checks.values():
            passed = "" if c.passed is None else fmt(c.passed)
            w.writerow(["check", c.name, fmt(c.margin), passed, fmt(c.asserted), c.detail])


def verdict_table(report: RunReport) -> str:
    lines = [f"{'check':<20} {'asserted':<9} {'result':<8} detail"]
    for c in report.checks.values():
        if c.passed is None:
            res = "skip"
        elif not c.asserted:
            res = "info"
        else:
            res = "PASS" if c.passed else "FAIL"
        lines.append(f"{c.name:<20} {('yes' if c.asserted else 'no'):<9} {res:<8} {c.detail}")
    return "\n".join(lines)


# -- subcommands -----------------------------------------------------------------

def _simulate(params, schedule, run, out: Path, grid: Grid):
    out.mkdir(parents=True, exist_ok=True)
    snaps = out / "snapshots"
    if run.snapshot_every:
        snaps.mkdir(exist_ok=True)

    def snapshot(idx, state):
        for name, arr in (("phi", state.phi), ("sigma", state.sigma), ("p", state.p)):
            write_snapshot(snaps / f"{name}_{idx:05d}.txt", grid, arr)

    writer = SeriesWriter(out / "series.csv")
    try:
        report = integrate(initial_state(run, params, grid), run, params, schedule, grid,
                           on_sample=writer, on_snapshot=snapshot)
    finally:
        writer.close()
    return report


def cmd_simulate(args) -> int:
    _, (params, schedule, run) = _load(args)
    grid = Grid(run.n, run.L)
    out = Path(args.out)
    _simulate(params, schedule, run, out, grid)
    (out / "config.ini").write_text(dump_config(params, schedule, run))
    print(f"wrote {out / 'series.csv'}")
    return EXIT_OK


def _finish(report, params, schedule, run, grid, out: Path, quiet=False) -> int:
    analysis.analyze(report, params, schedule, grid, run)
    write_report(out / "report.csv", report)
    table = verdict_table(report)
    (out / "verdict.txt").write_text(table + "\n")
    if not quiet:
        print(table)
    return EXIT_CHECK if analysis.failed_checks(report) else EXIT_OK


def cmd_analyze(args) -> int:
    _, (params, schedule, run) = _load(args)
    grid = Grid(run.n, run.L)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series_path = Path(args.series) if args.series else out / "series.csv"
    report = report_from_series(read_series(series_path), params, schedule, run)
    return _finish(report, params, schedule, run, grid, out)


def run_verify(config_text: str, overrides, out: Path, quiet=False) -> int:
    params, schedule, run = load_config(config_text, overrides)
    grid = Grid(run.n, run.L)
    report = _simulate(params, schedule, run, out, grid)
    (out / "config.ini").write_text(dump_config(params, schedule, run))
    return _finish(report, params, schedule, run, grid, out, quiet=quiet)


def cmd_verify(args) -> int:
    text = Path(args.config).read_text()
    return run_verify(text, _overrides(args), Path(args.out))


def cmd_steady(args) -> int:
    _, (params, schedule, run) = _load(args)
    grid = Grid(run.n, run.L)
    routes = {
        "closed_form": steady_closed_form(params, grid),
        "discrete_solve": steady_solve_discrete(grid, params),
        "gamma_minimize": gamma_minimize(grid, params, tol=args.tol),
    }
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["route", "sigma_inf_mean", "p_inf_mean", "gamma_value"])
    for name, s in routes.items():
        wn = grid.w_neumann
        w.writerow([name, fmt(float(np.sum(wn * s.sigma_inf) / grid.measure)),
                    fmt(float(np.sum(wn * s.p_inf) / grid.measure)), fmt(s.gamma_value)])
    w.writerow([])
    w.writerow(["route_a", "route_b", "L2_diff_sigma", "L2_diff_p", "agree_1e-8"])
    names = list(routes)
    worst = 0.0
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            ds = norm_l2(grid, routes[a].sigma_inf - routes[b].sigma_inf)
            dp = norm_l2(grid, routes[a].p_inf - routes[b].p_inf)
            worst = max(worst, ds, dp)
            w.writerow([a, b, fmt(ds), fmt(dp), fmt(max(ds, dp) <= 1e-8)])
    return EXIT_OK if worst <= 1e-8 else EXIT_CHECK


def _params_hash(params) -> str:
    from dataclasses import asdict

    blob = ",".join(f"{k}={v!r}" for k, v in sorted(asdict(params).items()))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _sweep_one(job):
    idx, name, value, text, overrides, out = job
    out = Path(out)
    row = {"index": idx, "name": name, "value": value, "dir": out.name}
    try:
        params, schedule, run = load_config(text, list(overrides) + [f"{name}={value}"])
        row["params_hash"] = _params_hash(params)
        out.mkdir(parents=True, exist_ok=True)
        code = run_verify(text, list(overrides) + [f"{name}={value}"], out, quiet=True)
        with open(out / "report.csv", newline="") as fh:
            rep = list(csv.DictReader(fh))
        for r in rep:
            if r["kind"] == "predicted" and r["name"] in ("condition_met", "beta_predicted"):
                row[r["name"]] = r["value"]
            if r["kind"] == "fitted" and r["name"] == "decay_rate_E":
                row["fitted_rate"] = r["value"]
            if r["kind"] == "check":
                verdict = "skip" if r["passed"] == "" else ("pass" if r["passed"] == "true" else "fail")
                if r["asserted"] != "true" and verdict != "skip":
                    verdict = f"reported-{verdict}"
                row[r["name"]] = verdict
        row["status"] = "ok" if code == EXIT_OK else "check-failed"
        row["exit"] = code
    except ConfigError as exc:
        row.update(status=f"config-error: {exc}", exit=EXIT_CONFIG)
    except SolverError as exc:
        row.update(status=f"solver-error: {exc}", exit=EXIT_SOLVER)
    return row


SWEEP_COLUMNS = ("index", "name", "value", "dir", "params_hash", "condition_met", "beta_predicted",
                 "fitted_rate", "phi_bounds", "nutrient_bounds", "psa_nonnegative", "absorbing_set",
                 "uniform_h1", "phi_vanishes", "exponential_decay", "status", "exit")


def run_sweep(config_text: str, overrides, out: Path, threads: int | None = None) -> int:
    axis = load_sweep_axis(config_text, overrides)
    if axis is None or not axis.values:
        raise ConfigError("sweep requires a [sweep] section with a non-empty values list")
    load_config(config_text, overrides)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, axis.name, v, config_text, tuple(overrides), str(out / f"run_{i:03d}_{axis.name}={v}"))
            for i, v in enumerate(axis.values)]
    threads = threads or int(os.environ.get("PCA_THREADS", "0")) or os.cpu_count() or 1
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, restval="", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: fmt(v) for k, v in r.items()})
    print(f"wrote {out / 'summary.csv'} ({len(rows)} runs)")
    return EXIT_CHECK if any(r["exit"] != EXIT_OK for r in rows) else EXIT_OK


def cmd_sweep(args) -> int:
    return run_sweep(Path(args.config).read_text(), _overrides(args), Path(args.out))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcagrowth", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--config", required=True, help="INI-style config file")
        p.add_argument("--out", default=out_default, help="output directory (created if absent)")
        p.add_argument("--seed", type=int, help="seed for random initial data")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (section.key=value or key=value); repeatable")
        p.add_argument("--clamp", action="store_true", help="clip fields to their bounds (non-conforming)")
        return p

    common(sub.add_parser("simulate", help="integrate and write series.csv")).set_defaults(fn=cmd_simulate)
    p = common(sub.add_parser("steady", help="steady state by three routes"))
    p.add_argument("--tol", type=float, default=1e-12, help="gradient tolerance for the energy minimization")
    p.set_defaults(fn=cmd_steady)
    p = common(sub.add_parser("analyze", help="analyze an existing series.csv"))
    p.add_argument("--series", help="series CSV (default OUT/series.csv)")
    p.set_defaults(fn=cmd_analyze)
    common(sub.add_parser("verify", help="simulate and analyze")).set_defaults(fn=cmd_verify)
    common(sub.add_parser("sweep", help="one verify run per value of the [sweep] axis")).set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
