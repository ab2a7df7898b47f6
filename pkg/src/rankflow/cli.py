"""``rankflow`` command line: check, simulate, validate, triples.

Exit codes: 0 success, 2 configuration error, 3 runtime budget exceeded,
4 statistical check failed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


from . import conditions, stats
from .config import ExperimentConfig, load_config
from .errors import BudgetError, ConfigError, SpecError
from .infinite import simulate_infinite
from .sim import (
    event_driven_path,
    local_time_occupation,
    local_time_tanaka,
    simulate_path,
    write_trajectory_csv,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_STAT = 0, 2, 3, 4

# minimum paths before a check's verdict is meaningful
MIN_PATHS = {"gap_law": 5000, "local_time": 1000, "sum_conservation": 1000}
CHECKS = tuple(MIN_PATHS)
DEFAULT_CHECKS = {2: ("gap_law", "local_time", "sum_conservation")}
GAP_LAW_TOLERANCE = 0.02
OCCUPATION_REL_TOLERANCE = 0.05
SE_MULTIPLIER = 3.0


def _dump(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _table(report: conditions.ConditionReport) -> str:
    rows = [
        ("sigma^2", ", ".join(repr(v) for v in report.sigmas2)),
        ("condition 1", str(report.condition1)),
        ("condition 2", str(report.condition2)),
        ("M0", repr(report.M0)),
        ("M1", repr(report.M1)),
        ("M2", repr(report.M2)),
        ("C", repr(report.C)),
        ("c", repr(report.c)),
        ("M0 > 2 M1", str(report.de_blassie)),
        ("classification", report.classification.value),
    ]
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k:<{width}}  {v}\n" for k, v in rows)


def cmd_check(cfg: ExperimentConfig, args) -> int:
    variances = cfg.variances()
    try:
        report = conditions.classify(variances, infinite=cfg.infinite)
    except SpecError as exc:
        raise ConfigError(str(exc), key="sigmas") from exc
    doc = {"schema_version": SCHEMA_VERSION, "command": "check", **report.to_dict()}
    text = _dump(doc)
    sys.stdout.write(text)
    sys.stderr.write(_table(report))
    if args.out:
        _write(Path(args.out), cfg.get("output", "report", "check.json"), text)
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out or ".")
    T = cfg.require("simulation", "T")
    dt = cfg.require("simulation", "dt")
    seed = cfg.seed()
    eps = cfg.get("simulation", "epsilon")
    decimation = cfg.get("simulation", "decimation", 1)
    traj_name = cfg.get("output", "trajectory", "trajectory.csv")
    summary = {"schema_version": SCHEMA_VERSION, "command": "simulate", "seed": seed}
    out.mkdir(parents=True, exist_ok=True)

    if cfg.infinite:
        spec = cfg.infinite_system()
        margin = cfg.get("simulation", "safety_margin", 1.0)
        run = simulate_infinite(spec, T, dt, seed, margin, epsilon=eps)
        traj = run.block_trajectory()
        write_trajectory_csv(traj, out / traj_name, decimation)
        run.record.write_csv(out / cfg.get("output", "active_set", "active_set.csv"))
        summary.update(
            scheme="infinite", halted=run.halted, final_block=int(run.block_size[-1]),
            materialized=run.n_materialized, truncation_bound=run.truncation_bound,
            activations=len(run.record.sizes) - 1,
        )
    else:
        spec = cfg.system()
        scheme = cfg.get("simulation", "scheme", "euler")
        if scheme == "euler":
            traj = simulate_path(spec, T, dt, seed)
            summary.update(scheme="euler", halted=False)
        elif scheme == "event":
            if eps is None:
                raise ConfigError("[simulation] epsilon is required for scheme = event", key="epsilon")
            traj, log = event_driven_path(spec, T, dt, seed, epsilon=eps)
            summary.update(scheme="event", halted=traj.halted, stopping_times=len(log),
                           halt_time=float(traj.times[-1]) if traj.halted else None)
        else:
            raise cfg.fail("simulation", "scheme", f"unknown scheme {scheme!r}; use euler or event")
        write_trajectory_csv(traj, out / traj_name, decimation)
    _write(out, cfg.get("output", "report", "simulate.json"), _dump(summary))
    return EXIT_OK


def _validate_checks(cfg: ExperimentConfig, n: int) -> tuple[str, ...]:
    checks = cfg.get("mc", "checks")
    if checks is None:
        checks = DEFAULT_CHECKS.get(n, ("sum_conservation",))
    for c in checks:
        if c not in CHECKS:
            raise cfg.fail("mc", "checks", f"unknown check {c!r}; known: {', '.join(CHECKS)}")
    return tuple(checks)


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    spec = cfg.system()
    checks = _validate_checks(cfg, spec.n)
    T = cfg.require("simulation", "T")
    dt = cfg.require("simulation", "dt")
    n_paths = cfg.require("mc", "n_paths")
    seed = cfg.seed()
    occ_eps = cfg.get("mc", "occupation_epsilon", 0.01)
    threads = args.threads
    results, mc_rows = [], []

    for name in checks:
        entry = {"name": name, "n_paths": n_paths}
        if name in ("gap_law", "local_time") and spec.n != 2:
            entry["status"] = "not_applicable"
        elif n_paths < MIN_PATHS[name]:
            entry["status"] = "insufficient statistical power"
            entry["min_paths"] = MIN_PATHS[name]
        elif name == "gap_law":
            ks = stats.gap_law_test(spec, T, dt, n_paths, seed, tolerance=GAP_LAW_TOLERANCE,
                                    threads=threads)
            entry.update(status="pass" if ks.passed else "fail", ks=ks.statistic,
                         tolerance=GAP_LAW_TOLERANCE)
        elif name == "local_time":
            est = stats.mc_means({
                "local_time_tanaka": lambda tr: local_time_tanaka(tr, spec).estimate,
                "local_time_occupation": lambda tr: local_time_occupation(tr, spec, 0, occ_eps).estimate,
            }, spec, T, dt, n_paths, seed, threads=threads)
            tan, occ = est["local_time_tanaka"], est["local_time_occupation"]
            y0 = spec.initial[1] - spec.initial[0]
            expected = stats.local_time_mean(y0, spec.drifts[1] - spec.drifts[0],
                                             spec.sigmas[0] ** 2 + spec.sigmas[1] ** 2, T)
            ok_tan = abs(tan.estimate - expected) <= SE_MULTIPLIER * tan.std_error
            rel = abs(occ.estimate - tan.estimate) / abs(tan.estimate)
            ok_occ = rel <= OCCUPATION_REL_TOLERANCE
            entry.update(status="pass" if ok_tan and ok_occ else "fail", expected=expected,
                         tanaka=tan.estimate, tanaka_se=tan.std_error, occupation=occ.estimate,
                         occupation_epsilon=occ_eps, occupation_rel_diff=rel)
            mc_rows += [tan, occ]
        elif name == "sum_conservation":
            r = stats.mc_mean(lambda tr: float(tr.named[-1].sum()), spec, T, dt, n_paths, seed,
                              threads=threads, name="sum_conservation")
            expected = sum(spec.initial) + T * sum(spec.drifts)
            ok = abs(r.estimate - expected) <= SE_MULTIPLIER * r.std_error
            entry.update(status="pass" if ok else "fail", expected=expected,
                         estimate=r.estimate, std_error=r.std_error)
            mc_rows.append(r)
        results.append(entry)

    failed = any(e["status"] == "fail" for e in results)
    doc = {"schema_version": SCHEMA_VERSION, "command": "validate", "seed": seed,
           "passed": not failed, "checks": results}
    out = Path(args.out or ".")
    _write(out, cfg.get("output", "report", "validate.json"), _dump(doc))
    out.mkdir(parents=True, exist_ok=True)
    stats.write_results_csv(mc_rows, out / cfg.get("output", "results", "results.csv"))
    for e in results:
        sys.stdout.write(f"{e['name']}: {e['status']}\n")
    return EXIT_STAT if failed else EXIT_OK


def cmd_triples(cfgs: list[ExperimentConfig], args) -> int:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for cfg in cfgs:
        spec = cfg.system()
        eps = cfg.epsilons()
        seed = cfg.seed()
        curve = stats.triple_proximity_curve(
            spec, cfg.require("simulation", "T"), eps, cfg.require("mc", "n_paths"), seed,
            dt=cfg.require("simulation", "dt"), threads=args.threads,
        )
        default = "triples.csv" if len(cfgs) == 1 else f"{Path(cfg.source).stem}_triples.csv"
        name = cfg.get("output", "curve", default)
        curve.write_csv(out / name)
        report = conditions.classify([s * s for s in spec.sigmas])
        runs.append({
            "config": Path(cfg.source).name, "curve_csv": name,
            "classification": report.classification.value,
            "epsilons": list(curve.epsilons), "frequencies": list(curve.frequencies),
            "ci_halfwidths": list(curve.ci_halfwidths), "n_paths": curve.n_paths, "seed": seed,
        })
        sys.stdout.write(f"{name}: {report.classification.value}\n")
    doc = {"schema_version": SCHEMA_VERSION, "command": "triples", "runs": runs}
    _write(out, "triples.json", _dump(doc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rankflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("check", "classify the variance sequence and print the spectral ledger"),
        ("simulate", "simulate one path and write its trajectory CSV"),
        ("validate", "run the statistical validation battery"),
        ("triples", "triple-proximity frequency curve(s)"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, action="append" if name == "triples" else "store",
                        help="experiment manifest" + (" (repeatable)" if name == "triples" else ""))
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $RANKFLOW_THREADS or 1)")
        sp.add_argument("--out", default=None, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is None:
        try:
            args.threads = int(os.environ.get("RANKFLOW_THREADS", "1"))
        except ValueError:
            print("rankflow: RANKFLOW_THREADS must be an integer", file=sys.stderr)
            return EXIT_CONFIG
    if args.threads < 1:
        print("rankflow: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    paths = args.config if isinstance(args.config, list) else [args.config]
    source = paths[0]
    try:
        cfgs = []
        for path in paths:
            source = path
            cfgs.append(load_config(path))
        if args.command == "triples":
            return cmd_triples(cfgs, args)
        handler = {"check": cmd_check, "simulate": cmd_simulate, "validate": cmd_validate}[args.command]
        return handler(cfgs[0], args)
    except ConfigError as exc:
        print(f"rankflow: {source}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"rankflow: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (SpecError, ValueError) as exc:
        print(f"rankflow: {source}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
