"""Batch command line: run, sweep, stability, lyapunov, oracle, validate.

Exit codes: 0 success, 2 bad configuration, 3 oracle problem too large,
4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, apply_sweep, load_config, parse_sweep, validate_config
from .sim import World

log = logging.getLogger("orcd")

EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_IO = 4

RESULT_COLUMNS = [
    "scenario_hash", "seed", "policy", "param", "mean_delay_slots", "p50", "p95",
    "delivered", "drop_buffer", "drop_ttl", "drop_retry", "drop_fo", "overhead_us",
    "created", "delivery_ratio", "transmissions", "data_us",
]
BACKLOG_COLUMNS = ["scenario_hash", "seed", "slot", "node", "queue_len"]
DRIFT_COLUMNS = ["scenario_hash", "seed", "bin_center", "mean_drift", "count", "insufficient"]
STABILITY_COLUMNS = ["scenario_hash", "seed", "policy", "bounded", "slope", "mean_third", "mean_fourth"]
ORACLE_COLUMNS = ["scenario_hash", "destination", "direction", "theta_max"]


def result_row(cfg, seed, metrics, param=""):
    mean, p50, p95 = metrics.delay_stats()
    return {
        "scenario_hash": cfg.scenario_hash(),
        "seed": seed,
        "policy": cfg.policy.name,
        "param": param,
        "mean_delay_slots": mean,
        "p50": p50,
        "p95": p95,
        "delivered": metrics.delivered,
        "drop_buffer": metrics.drop_buffer,
        "drop_ttl": metrics.drop_ttl,
        "drop_retry": metrics.drop_retry,
        "drop_fo": metrics.fo_lost,
        "overhead_us": metrics.overhead_us,
        "created": metrics.created,
        "delivery_ratio": metrics.delivered / metrics.created if metrics.created else float("nan"),
        "transmissions": metrics.transmissions,
        "data_us": metrics.data_us,
    }


def write_csv(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _backlog_rows(cfg, seed, metrics):
    h = cfg.scenario_hash()
    for slot, row in zip(metrics.backlog_slots, metrics.backlog_rows):
        for node, q in enumerate(row):
            yield {"scenario_hash": h, "seed": seed, "slot": slot, "node": node, "queue_len": q}


def _prepare(args):
    cfg = load_config(args.config)
    if args.policy:
        cfg.policy.name = args.policy
    if args.mode:
        cfg.mac.mode = args.mode
    if args.seed_override is not None:
        cfg.seeds = [args.seed_override]
    if args.out:
        cfg.output_dir = args.out
    validate_config(cfg)
    return cfg


def _simulate(cfg, seed):
    log.info("running %s seed %s (%s, %d slots)", cfg.scenario_hash(), seed, cfg.policy.name, cfg.horizon)
    return World(cfg, seed).run()


def cmd_run(args):
    cfg = _prepare(args)
    out = Path(cfg.output_dir)
    results, backlog = [], []
    for seed in cfg.seeds:
        m = _simulate(cfg, seed)
        results.append(result_row(cfg, seed, m))
        backlog.extend(_backlog_rows(cfg, seed, m))
        print(f"seed {seed}: mean delay {results[-1]['mean_delay_slots']:.3f} slots, delivered {m.delivered}/{m.created}")
    write_csv(out / "results.csv", RESULT_COLUMNS, results)
    write_csv(out / "backlog.csv", BACKLOG_COLUMNS, backlog)
    return 0


def cmd_sweep(args):
    cfg = _prepare(args)
    if not args.sweep:
        raise ConfigError("sweep needs --sweep PARAM=v1,v2,...")
    param, values = parse_sweep(args.sweep)
    rows = []
    for v in values:
        point = apply_sweep(cfg, param, v)
        for seed in point.seeds:
            rows.append(result_row(point, seed, _simulate(point, seed), f"{param}={v}"))
    write_csv(Path(cfg.output_dir) / "results.csv", RESULT_COLUMNS, rows)
    print(f"{len(rows)} rows written to {Path(cfg.output_dir) / 'results.csv'}")
    return 0


def _post_warmup_backlog(cfg, m):
    slots = np.asarray(m.backlog_slots)
    return m.total_backlog[slots >= cfg.warmup_slots], m.backlog[slots >= cfg.warmup_slots]


def cmd_stability(args):
    cfg = _prepare(args)
    n = len(range(cfg.warmup_slots, cfg.horizon, cfg.backlog_every))
    if n < args.min_length:
        raise ConfigError(f"{n} post-warm-up backlog samples; the verdict needs at least {args.min_length}")
    rows = []
    for seed in cfg.seeds:
        m = _simulate(cfg, seed)
        series, _ = _post_warmup_backlog(cfg, m)
        v = analysis.stability_verdict(series, min_length=args.min_length)
        rows.append({
            "scenario_hash": cfg.scenario_hash(), "seed": seed, "policy": cfg.policy.name,
            "bounded": v.bounded, "slope": v.slope, "mean_third": v.mean_third, "mean_fourth": v.mean_fourth,
        })
        print(f"seed {seed}: {'bounded' if v.bounded else 'unbounded'} (slope {v.slope:.3g})")
    write_csv(Path(cfg.output_dir) / "stability.csv", STABILITY_COLUMNS, rows)
    return 0


def cmd_lyapunov(args):
    cfg = _prepare(args)
    topo = cfg.build_topology()
    lcfg = analysis.LyapunovConfig.from_topology(topo)
    rows = []
    for seed in cfg.seeds:
        m = _simulate(cfg, seed)
        _, states = _post_warmup_backlog(cfg, m)
        est = analysis.drift_estimate(states, topo, lcfg)
        for b in est.bins:
            rows.append({
                "scenario_hash": cfg.scenario_hash(), "seed": seed, "bin_center": b.center,
                "mean_drift": b.mean_drift, "count": b.count, "insufficient": b.insufficient,
            })
        print(f"seed {seed}: B = {est.B:.4g}, epsilon = {est.epsilon:.4g}")
    write_csv(Path(cfg.output_dir) / "drift.csv", DRIFT_COLUMNS, rows)
    return 0


def cmd_oracle(args):
    cfg = _prepare(args)
    topo = cfg.build_topology()
    if args.direction:
        direction = np.array([float(x) for x in args.direction.split(",")])
    else:
        direction = np.zeros(topo.node_count)
        for fl in cfg.traffic.flows:
            direction[fl.source] += fl.rate * cfg.traffic.load
    d = topo.destinations[0]
    theta = analysis.stability_region_max_rate(topo, direction, d)
    print(f"theta* = {theta!r}")
    write_csv(
        Path(cfg.output_dir) / "oracle.csv",
        ORACLE_COLUMNS,
        [{"scenario_hash": cfg.scenario_hash(), "destination": d,
          "direction": " ".join(repr(float(x)) for x in direction), "theta_max": theta}],
    )
    return 0


def cmd_validate(args):
    cfg = load_config(args.config)
    problems = validate_config(cfg)
    for p in problems:
        print(p)
    return EXIT_CONFIG if problems else 0


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "stability": cmd_stability,
    "lyapunov": cmd_lyapunov,
    "oracle": cmd_oracle,
    "validate": cmd_validate,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="orcd", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="scenario JSON file")
        sp.add_argument("--seed-override", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--policy", default=None)
        sp.add_argument("--mode", choices=("ideal", "contention"), default=None)
        if name == "sweep":
            sp.add_argument("--sweep", required=True, help="PARAM=v1,v2,...")
        if name == "stability":
            sp.add_argument("--min-length", type=int, default=analysis.MIN_VERDICT_LENGTH)
        if name == "oracle":
            sp.add_argument("--direction", default=None, help="comma-separated rate direction per node")
    return ap


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except analysis.OracleSizeError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
