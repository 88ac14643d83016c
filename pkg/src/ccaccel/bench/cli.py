"""Command line entry point: ``ccaccel <subcommand> [options]``."""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor

import yaml

from . import scenarios
from .config import ConfigError, ExperimentConfig, _merge, load
from .metrics import MetricsReport, export

log = logging.getLogger("ccaccel")

SUBCOMMANDS = {"run-kvs": "kvs", "run-tx": "tx", "run-dlrm": "dlrm", "ping-pong": "pingpong"}


def _base_config(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else ExperimentConfig()
    over: dict = {}
    if args.seed is not None:
        over.setdefault("experiment", {})["seed"] = args.seed
    if getattr(args, "pipeline", None):
        over.setdefault("baseline", {})["pipeline"] = args.pipeline
    return cfg.replace(**over) if over else cfg


def _with_scenario(cfg: ExperimentConfig, scenario: str) -> ExperimentConfig:
    over = {"experiment": {"scenario": scenario}}
    if scenario in ("tx", "dlrm", "pingpong") and cfg.workload.app != scenario:
        over["workload"] = {"app": scenario}
        if scenario == "tx":
            over["workload"]["op_mix"] = {"reads": 0, "writes": 1}
            over["workload"]["key_space"] = min(cfg.workload.key_space, cfg.apps.tx.n_records)
        elif scenario == "dlrm":
            over["workload"]["op_mix"] = {"sum": 1.0}
    return cfg.replace(**over)


def _summary(r: MetricsReport) -> str:
    return (f"{r.scenario}/{r.pipeline} seed={r.seed} completed={r.completed} failed={r.failed} "
            f"throughput={r.throughput_ops_s:,.0f} ops/s mean={r.lat_mean_ns:,.0f} ns "
            f"p50={r.lat_p50_ns} ns p99={r.lat_p99_ns} ns")


def _write(report, out: str | None) -> None:
    if out:
        p = export(report, out)
        log.info("wrote %s", p)


def cmd_run(args) -> int:
    scenario = SUBCOMMANDS[args.cmd]
    cfg = _with_scenario(_base_config(args), scenario)
    if scenario == "pingpong":
        over = {}
        if args.mode:
            over["mode"] = args.mode
        if args.interval:
            over["poll_interval"] = args.interval
        if args.iterations:
            over["iterations"] = args.iterations
        cfg = cfg.replace(cpollmod=over) if over else cfg
    report = scenarios.run_experiment(cfg)
    print(_summary(report))
    if scenario == "pingpong" and "poll_traffic_gib_per_s" in report.extra:
        print(f"poll traffic: {report.extra['poll_traffic_gib_per_s']:.3f} GiB/s")
    _write(report, args.out)
    if args.plot:
        from .plots import plot_cdf
        plot_cdf([report], args.plot, title=scenario)
    return 0


def parse_param(text: str) -> tuple[str, str, list]:
    """``section.key=v1,v2,...`` with YAML-typed values."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise argparse.ArgumentTypeError(f"expected section.key=v1,v2,... got {text!r}")
    name, vals = text.split("=", 1)
    section, key = name.split(".", 1)
    return section, key, [yaml.safe_load(v) for v in vals.split(",")]


def _nest(key: str, value) -> dict:
    for part in reversed(key.split(".")):
        value = {part: value}
    return value


def sweep_configs(base: ExperimentConfig, params: list[tuple[str, str, list]]) -> list[ExperimentConfig]:
    out = []
    for combo in itertools.product(*[p[2] for p in params]):
        over: dict = {}
        for (section, key, _), v in zip(params, combo):
            _merge(over, {section: _nest(key, v)})
        out.append(base.replace(**over))
    return out


def _run_one(cfg_dict: dict) -> dict:
    from .config import from_dict
    return scenarios.run_experiment(from_dict(cfg_dict)).to_dict()


def cmd_sweep(args) -> int:
    base = _base_config(args)
    if args.scenario:
        base = _with_scenario(base, args.scenario)
    cfgs = sweep_configs(base, args.param)
    dicts = [c.to_dict() for c in cfgs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, dicts))
    else:
        results = [_run_one(d) for d in dicts]
    reports = [MetricsReport.from_dict(r) for r in results]
    for c, r in zip(cfgs, reports):
        point = ", ".join(f"{s}.{k}={_lookup(c, s, k)}" for s, k, _ in args.param)
        print(f"[{point}] {_summary(r)}")
    _write(reports, args.out)
    return 0


def _lookup(cfg: ExperimentConfig, section: str, key: str):
    v = getattr(cfg, section)
    for part in key.split("."):
        v = v[part] if isinstance(v, dict) else getattr(v, part)
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccaccel", description="Coherent-accelerator RPC simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="report path (.json or .csv)")

    for name, scen in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {scen} scenario")
        common(p)
        p.add_argument("--plot", help="write a latency CDF PNG here")
        if scen == "pingpong":
            p.add_argument("--mode", choices=["cpoll", "poll"])
            p.add_argument("--interval", type=int, help="poll interval in accelerator cycles")
            p.add_argument("--iterations", type=int)
        else:
            p.add_argument("--pipeline", choices=["rambda", "cpu_rpc", "smartnic", "hyperloop"])
        p.set_defaults(fn=cmd_run)
    p = sub.add_parser("sweep", help="cartesian parameter sweep")
    common(p)
    p.add_argument("--scenario", choices=sorted(set(SUBCOMMANDS.values())))
    p.add_argument("--pipeline", choices=["rambda", "cpu_rpc", "smartnic", "hyperloop"])
    p.add_argument("--param", type=parse_param, action="append", default=[], required=True,
                   help="section.key=v1,v2,... (repeatable)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(fn=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
