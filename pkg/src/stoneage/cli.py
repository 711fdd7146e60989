"""Command-line entry point: ``stoneage run|sweep|counterexample|graph gen|trace ...``.

Exit codes: 0 ok, 1 invariant or task violation, 2 configuration error,
3 budget exceeded.
"""
from __future__ import annotations

import json
import sys
import click

from .engine import MaxRounds, MaxSteps, Scheduler, run
from .experiments import (ConfigError, ExperimentConfig, build_protocol, build_scheduler,
                          diameter_bound, dumps_report, exit_code, initial_config,
                          run_experiment, sweep, sweep_csv)
from .failed_unison import run_livelock_check
from .topology import Graph, GraphError, GraphSpec, build_graph, write_edge_list
from .unison import au_protocol

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3


def _fail_config(msg: str):
    click.echo(f"config error: {msg}", err=True)
    sys.exit(EXIT_CONFIG)


def _load(path: str, no_timing: bool) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.load(path)
    except ConfigError as exc:
        _fail_config(str(exc))
    if no_timing:
        cfg.timing = False
    return cfg


@click.group()
def main():
    """Stone-age protocol simulator and verifier."""


@main.command("run")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Write the JSON report here (default: stdout or the config's output).")
@click.option("--violations", type=click.Path(dir_okay=False), help="Write monitor violations as JSON lines.")
@click.option("--no-timing", is_flag=True, help="Omit wall-time fields so reports compare byte for byte.")
@click.option("--workers", type=int, default=None, help="Parallel runs (default: $STONEAGE_WORKERS or 1).")
def run_cmd(config, out, violations, no_timing, workers):
    """Run every seed of CONFIG and print the aggregate report."""
    cfg = _load(config, no_timing)
    try:
        report = run_experiment(cfg, workers)
    except ConfigError as exc:
        _fail_config(str(exc))
    text = dumps_report(report)
    target = out or cfg.output
    if target:
        with open(target, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    if violations:
        with open(violations, "w") as fh:
            for r in report["runs"]:
                for v in r.get("violations", []) + r.get("post_violations", []):
                    fh.write(json.dumps({"seed": r["seed"], **v}, sort_keys=True) + "\n")
    agg = report["aggregate"]
    click.echo(f"{agg['stabilized']}/{agg['runs']} runs stabilized; median round {agg['median_round']}, "
               f"max {agg['max_round']}; post-stabilization violations {agg['post_violations']}", err=True)
    sys.exit(exit_code(report))


@main.command("sweep")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--axis", type=click.Choice(["n", "D", "B"]), required=True)
@click.option("--values", required=True, help="Comma-separated axis values.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="CSV output path.")
@click.option("--json", "json_path", type=click.Path(dir_okay=False), help="JSON output path.")
@click.option("--no-timing", is_flag=True)
@click.option("--workers", type=int, default=None)
def sweep_cmd(config, axis, values, csv_path, json_path, no_timing, workers):
    """Aggregate CONFIG over several values of one axis."""
    cfg = _load(config, no_timing)
    try:
        vals = [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        _fail_config("values: expected comma-separated integers")
    try:
        result = sweep(cfg, axis, vals, workers)
    except ConfigError as exc:
        _fail_config(str(exc))
    table = sweep_csv(result)
    if csv_path:
        with open(csv_path, "w") as fh:
            fh.write(table)
    if json_path:
        with open(json_path, "w") as fh:
            fh.write(json.dumps(result, sort_keys=True, indent=1, default=str) + "\n")
    click.echo(table, nl=False)
    if any(r["post_violations"] for r in result["rows"]):
        sys.exit(EXIT_VIOLATION)
    if cfg.hard_budget and any(r["stabilized"] < r["runs"] for r in result["rows"]):
        sys.exit(EXIT_BUDGET)


@main.command("counterexample")
def counterexample_cmd():
    """Replay the 8-step live-lock of the reset-based unison attempt."""
    verdict = run_livelock_check()
    click.echo(verdict.table())
    sys.exit(EXIT_OK if verdict.ok else EXIT_VIOLATION)


@main.group("graph")
def graph_group():
    """Graph utilities."""


@graph_group.command("gen")
@click.option("--kind", type=click.Choice(["complete", "path", "cycle", "wheel", "random"]), required=True)
@click.option("--n", type=int, required=True)
@click.option("--D", "D", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--p", type=float, default=0.3)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def graph_gen(kind, n, D, seed, p, out):
    """Write a generated graph as an edge list."""
    try:
        g = build_graph(GraphSpec(kind=kind, n=n, D=D, seed=seed, p=p))
    except GraphError as exc:
        _fail_config(f"graph: {exc}")
    write_edge_list(g, out)
    click.echo(f"{g.name}: n={g.n} edges={len(g.edges)} diameter={g.diameter}")


@main.group("trace")
def trace_group():
    """Record and replay single-run traces."""


@trace_group.command("record")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=0)
@click.option("--rounds", type=int, default=None, help="Rounds to record (default: the config budget).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def trace_record(config, seed, rounds, out):
    """Run one seed of CONFIG and write its trace as JSON lines."""
    cfg = _load(config, True)
    try:
        spec = dict(cfg.graph)
        if cfg.vary_graph:
            spec["seed"] = spec.get("seed", 0) + seed
        g = build_graph(GraphSpec.from_dict(spec))
        D = diameter_bound(cfg, g)
        proto = build_protocol(cfg.protocol, D, cfg.params)
        init = initial_config(cfg.init, proto, g.n, seed)
        sched = build_scheduler(cfg.scheduler, seed)
    except (ConfigError, GraphError) as exc:
        _fail_config(str(exc))
    trace = run(g, proto, sched, init, MaxRounds(rounds or cfg.budget_rounds), seed)
    with open(out, "w") as fh:
        fh.write(trace.to_jsonl())
    click.echo(f"{trace.steps} steps, {trace.completed_rounds} rounds -> {out}")


def protocol_from_header(header: dict):
    name, params = header["protocol"], header.get("params", {})
    D = params.get("D")
    if name == "au-mutant":
        return au_protocol(D, require_good=False)
    return build_protocol(name, D, {k: params[k] for k in ("p0", "k_id") if k in params})


@trace_group.command("replay")
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
def trace_replay(trace_file):
    """Re-execute a recorded trace from its header and compare byte for byte."""
    with open(trace_file) as fh:
        original = fh.read()
    try:
        header = json.loads(original.splitlines()[0])
        proto = protocol_from_header(header)
        gd = header["graph"]
        g = Graph.from_edges(gd["n"], [tuple(e) for e in gd["edges"]], name=gd.get("name", ""))
        sched = Scheduler.from_dict(header["scheduler"])
        init = tuple(proto.parse_state(s) for s in header["init"])
        steps = len(original.splitlines()) - 1
    except (KeyError, ValueError, IndexError, GraphError, ConfigError) as exc:
        _fail_config(f"trace header: {exc}")
    trace = run(g, proto, sched, init, MaxSteps(steps), header["seed"])
    trace.status = header.get("status", trace.status)
    if trace.to_jsonl() == original:
        click.echo(f"replay identical ({steps} steps)")
        sys.exit(EXIT_OK)
    click.echo("replay differs from the recorded trace", err=True)
    sys.exit(EXIT_VIOLATION)


if __name__ == "__main__":
    main()
