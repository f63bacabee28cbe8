"""Command-line entry point: ``citysim <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, fields
from pathlib import Path

from .errors import CitySimError
from .experiments.config import RunConfig

log = logging.getLogger("citysim")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _optional(cast):
    def parse(text: str):
        return None if text.lower() in ("none", "null", "") else cast(text)
    parse.__name__ = cast.__name__
    return parse


def _field_type(f, default):
    if isinstance(default, bool):
        return _bool
    if isinstance(default, dict):
        return json.loads
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        return type(default)
    if f.name == "epr_decay_km":
        return _optional(float)
    return _optional(str)


def add_config_flags(parser: argparse.ArgumentParser, **defaults) -> None:
    """One ``--flag`` per RunConfig key; ``defaults`` overrides the shown default."""
    parser.add_argument("--config", help="JSON RunConfig file; flags override its values")
    group = parser.add_argument_group("run configuration")
    for f in fields(RunConfig):
        default = f.default if f.default is not MISSING else f.default_factory()
        shown = defaults.get(f.name, default)
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=_field_type(f, default),
                           default=None, metavar=f.name.upper(),
                           help=f"default: {json.dumps(shown)}")


def config_from_args(args, **defaults) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig(**defaults)
    cfg = cfg.override(**{f.name: getattr(args, f.name, None) for f in fields(RunConfig)})
    return cfg.validate()


def _print(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True, default=str))


# -- subcommands ------------------------------------------------------------------------

COUNTERFACTUAL_DEFAULTS = dict(agent_kind="epr", population="quintiles", n_agents=1000, days=7.0,
                               epr_decay_km=1.0,
                               synthetic_city={"n_blocks": 100, "pois_per_block": 8,
                                               "segregation_level": 1.0, "seed": 0})


def cmd_simulate(args) -> int:
    from .experiments.runner import simulate

    rec = simulate(config_from_args(args))
    _print({"run_dir": str(rec.path), "stats": rec.stats.to_dict(), "setup": rec.setup_stats.to_dict(),
            **rec.extra})
    return 0


def cmd_benchmark(args) -> int:
    from .experiments import benchmark as B
    from .experiments.runner import save_summary_run
    from .metrics import MetricsReport

    cfg = config_from_args(args)
    if args.workload == "simulation":
        summary = B.run_benchmark(cfg)
        path = Path(summary["run_dir"])
    elif args.workload == "decisions":
        summary = B.decision_benchmark(cfg)
        summary["optimizer"] = cfg.optimizer
        metrics = MetricsReport(rr=summary["rr"], tr=summary["tr"], speedup=summary["speedup"])
        path = save_summary_run(cfg, metrics, {"benchmark.json": summary})
    else:
        lm = cfg.latency_model
        res = B.overlap_benchmark(cfg.n_agents, lm, cfg.pool_capacity)
        summary = {**res, "n_agents": cfg.n_agents, "optimizer": "async pooled gateway",
                   "time_per_agent": res["wall_time"] / cfg.n_agents,
                   "baseline_time_per_agent": res["baseline_wall_time"] / cfg.n_agents,
                   "rr": 0.0, "tr": 0.0}
        files = {"benchmark.json": summary}
        if args.scalability:
            files["scalability.json"] = B.scalability_curve(lm=lm, capacity=cfg.pool_capacity)
        path = save_summary_run(cfg, MetricsReport(speedup=res["speedup"], rr=0.0, tr=0.0), files)
    print(f"run directory: {path}")
    _print({k: v for k, v in summary.items() if not isinstance(v, dict)})
    return 0


def cmd_faithfulness(args) -> int:
    from .experiments.faithfulness import faithfulness_experiment, save_faithfulness

    cfg = config_from_args(args)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    result = faithfulness_experiment(methods, cfg.n_agents, args.reps, cfg.seed, cfg=cfg)
    primary = cfg.optimizer if cfg.optimizer in result else next(m for m in methods if m in result)
    path = save_faithfulness(result, primary, cfg)
    print(f"run directory: {path}")
    for m in methods:
        if m in result:
            _print({m: {k: v for k, v in result[m].items() if k != "per_agent_jsd"}})
    return 0


def cmd_counterfactual(args) -> int:
    from .experiments.counterfactual import counterfactual_even_income, save_counterfactual

    cfg = config_from_args(args, **COUNTERFACTUAL_DEFAULTS)
    result = counterfactual_even_income(cfg)
    path = save_counterfactual(result, cfg)
    print(f"run directory: {path}")
    _print({"original_mean": result["original"]["mean"], "even_mean": result["even"]["mean"],
            "reduction": result["reduction"]})
    return 0


def cmd_ingest(args) -> int:
    from .environment import City
    from .ingest import run_ingest

    _print(run_ingest(args.input, City.load(args.city), args.out, args.tz, args.snap_km))
    return 0


def cmd_gen_city(args) -> int:
    from .environment import gen_synthetic_city

    city = gen_synthetic_city(args.n_blocks, args.pois_per_block, args.segregation_level, args.seed)
    city.save(args.out)
    print(f"wrote {args.out}: {len(city.blocks)} blocks, {len(city.pois)} POIs")
    return 0


def cmd_interrogate(args) -> int:
    from .experiments.interrogate import Interrogator

    it = Interrogator(args.run_dir)
    try:
        if args.question:
            print(it.ask(args.agent, args.question).render())
            return 0
        return repl(it, args.agent)
    finally:
        it.close()


def repl(it, agent: int, stdin=None, stdout=None) -> int:
    """Read questions line by line; ``:agent N`` switches agent, ``:quit`` or EOF exits."""
    stdin, stdout = stdin or sys.stdin, stdout or sys.stdout
    stdout.write(f"talking to agent {agent}; ':agent N' switches, ':quit' exits\n")
    while True:
        stdout.write(f"agent {agent}> ")
        stdout.flush()
        line = stdin.readline()
        if not line:
            stdout.write("\n")
            return 0
        line = line.strip()
        if not line:
            continue
        if line in (":quit", ":q", "quit", "exit"):
            return 0
        if line.startswith(":agent"):
            try:
                candidate = int(line.split()[1])
                it.memory_of(candidate)
                agent = candidate
            except (IndexError, ValueError, CitySimError, KeyError) as exc:
                stdout.write(f"cannot switch: {exc}\n")
            continue
        try:
            stdout.write(it.ask(agent, line).render() + "\n")
        except CitySimError as exc:
            stdout.write(f"error: {exc}\n")


def cmd_report(args) -> int:
    from .experiments.report import emit_report

    for path in emit_report(args.run_dir, args.format, args.out):
        print(path)
    return 0


# -- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citysim", description="Large-scale urban agent simulation "
                                     "with an LLM request gateway and prompt optimizers.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a simulation and write a run directory")
    add_config_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="optimized pipeline against its unoptimized baseline")
    p.add_argument("--workload", choices=("simulation", "decisions", "gateway"), default="simulation",
                   help="whole simulation, its location-choice rounds, or bare gateway requests "
                        "(default: simulation)")
    p.add_argument("--scalability", action="store_true",
                   help="gateway workload only: also record per-agent time for 1..10000 agents")
    add_config_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("faithfulness", help="answer drift of prompt optimizers against raw prompts")
    p.add_argument("--methods", default="batch,archetype,group_distill",
                   help="comma-separated methods (default: batch,archetype,group_distill)")
    p.add_argument("--reps", type=int, default=100, help="repetitions per agent (default: 100)")
    add_config_flags(p)
    p.set_defaults(func=cmd_faithfulness)

    p = sub.add_parser("counterfactual", help="segregation with original against even income homes")
    add_config_flags(p, **COUNTERFACTUAL_DEFAULTS)
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("ingest", help="check-in CSV to trajectory JSONL")
    p.add_argument("--input", required=True, help="CSV with user_id,timestamp,lat,lon[,poi_id]")
    p.add_argument("--city", required=True, help="city JSON file")
    p.add_argument("--out", required=True, help="output trajectory JSONL")
    p.add_argument("--tz", default="UTC", help="timezone for naive timestamps (default: UTC)")
    p.add_argument("--snap-km", type=float, default=0.5, help="max snapping distance (default: 0.5)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-city", help="write a synthetic grid city")
    p.add_argument("--n-blocks", type=int, default=100, help="default: 100")
    p.add_argument("--pois-per-block", type=int, default=8, help="default: 8")
    p.add_argument("--segregation-level", type=float, default=0.6, help="default: 0.6")
    p.add_argument("--seed", type=int, default=0, help="default: 0")
    p.add_argument("--out", required=True, help="output city JSON")
    p.set_defaults(func=cmd_gen_city)

    p = sub.add_parser("interrogate", help="ask a simulated agent about its memories")
    p.add_argument("run_dir")
    p.add_argument("--agent", type=int, default=0, help="agent id (default: 0)")
    p.add_argument("--question", help="ask once and exit instead of starting the prompt loop")
    p.set_defaults(func=cmd_interrogate)

    p = sub.add_parser("report", help="write report files for a run directory")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=("json", "markdown", "svg"), default="json",
                   help="default: json")
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CitySimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
