"""Seeded experiment batches: config parsing, single runs, aggregation, sweeps."""
from __future__ import annotations

import copy
import csv
import io
import json
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np
import yaml

from . import unison
from .engine import HoldsFor, ProtocolSpec, Scheduler, parse_schedule_file, rho, run
from .failed_unison import failed_protocol
from .le import LeParams, le_protocol
from .mis import MisParams, mis_protocol
from .synchronizer import synchronize
from .topology import Graph, GraphError, GraphSpec, build_graph
from .verification import (AUMonitor, TaskChecker, attach_monitors, check_au_liveness,
                           check_au_safety, measure_stabilization)

PROTOCOLS = ("au", "mis", "le", "sync-mis", "sync-le", "failed-au")
SCHEDULERS = ("synchronous", "round-robin", "random-fair", "scripted")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the field path."""


# ----------------------------------------------------------------- config

@dataclass
class ExperimentConfig:
    protocol: str
    graph: dict
    scheduler: dict = field(default_factory=lambda: {"kind": "synchronous"})
    D: int | None = None
    params: dict = field(default_factory=dict)
    init: Any = "q0"
    seeds: list = field(default_factory=lambda: [0])
    budget_rounds: int = 1000
    hard_budget: bool = False
    window: int | None = None
    vary_graph: bool = False
    liveness: list = field(default_factory=lambda: [1, 3])
    output: str | None = None
    timing: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>: expected a mapping")
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"<root>: unknown fields {extra}")
        if "protocol" not in d:
            raise ConfigError("protocol: required")
        if "graph" not in d:
            raise ConfigError("graph: required")
        d = dict(d)
        seeds = d.get("seeds", [0])
        if isinstance(seeds, int):
            if seeds < 1:
                raise ConfigError("seeds: count must be positive")
            d["seeds"] = list(range(seeds))
        elif not (isinstance(seeds, list) and all(isinstance(s, int) for s in seeds) and seeds):
            raise ConfigError("seeds: expected a positive count or a non-empty list of integers")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"<file>: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"<file>: {exc}") from None
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol: must be one of {list(PROTOCOLS)}, got {self.protocol!r}")
        if not isinstance(self.graph, dict) or "kind" not in self.graph:
            raise ConfigError("graph.kind: required")
        try:
            GraphSpec.from_dict(self.graph)
        except (GraphError, TypeError) as exc:
            raise ConfigError(f"graph: {exc}") from None
        kind = self.scheduler.get("kind") if isinstance(self.scheduler, dict) else None
        if kind not in SCHEDULERS:
            raise ConfigError(f"scheduler.kind: must be one of {list(SCHEDULERS)}")
        extra = set(self.scheduler) - {"kind", "B", "script", "file"}
        if extra:
            raise ConfigError(f"scheduler: unknown fields {sorted(extra)}")
        if kind == "random-fair" and int(self.scheduler.get("B", 1)) < 1:
            raise ConfigError("scheduler.B: must be >= 1")
        if self.D is not None and (not isinstance(self.D, int) or self.D < 1):
            raise ConfigError("D: must be a positive integer")
        if not isinstance(self.budget_rounds, int) or self.budget_rounds <= 0:
            raise ConfigError("budget_rounds: must be a positive integer")
        if self.window is not None and (not isinstance(self.window, int) or self.window <= 0):
            raise ConfigError("window: must be a positive integer")
        extra = set(self.params) - {"p0", "k_id"}
        if extra:
            raise ConfigError(f"params: unknown fields {sorted(extra)}")
        if "p0" in self.params:
            try:
                p0 = Fraction(str(self.params["p0"]))
            except (ValueError, ZeroDivisionError):
                raise ConfigError("params.p0: not a number") from None
            if not 0 < p0 <= Fraction(1, 2):
                raise ConfigError("params.p0: must lie in (0, 1/2]")
        if "k_id" in self.params and (not isinstance(self.params["k_id"], int) or self.params["k_id"] < 2):
            raise ConfigError("params.k_id: must be an integer >= 2")
        if isinstance(self.init, str):
            if self.init not in ("q0", "random"):
                raise ConfigError("init: must be 'q0', 'random' or {file: path}")
        elif not (isinstance(self.init, dict) and set(self.init) == {"file"}):
            raise ConfigError("init: must be 'q0', 'random' or {file: path}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["window"] = self.window
        return d


# --------------------------------------------------------------- building

def diameter_bound(cfg: ExperimentConfig, g: Graph) -> int:
    D = cfg.D if cfg.D is not None else cfg.graph.get("D") or g.diameter
    D = max(1, D)
    if g.diameter > D:
        raise ConfigError(f"D: graph diameter {g.diameter} exceeds the declared bound {D}")
    return D


def build_protocol(name: str, D: int, params: dict | None = None) -> ProtocolSpec:
    params = params or {}
    kw = {}
    if "p0" in params:
        kw["p0"] = Fraction(str(params["p0"]))
    if "k_id" in params:
        kw["k_id"] = params["k_id"]
    if name == "au":
        return unison.au_protocol(D)
    if name == "mis":
        return mis_protocol(MisParams(D=D, **kw))
    if name == "le":
        return le_protocol(LeParams(D=D, **kw))
    if name == "sync-mis":
        return synchronize(mis_protocol(MisParams(D=D, **kw)), D)
    if name == "sync-le":
        return synchronize(le_protocol(LeParams(D=D, **kw)), D)
    if name == "failed-au":
        return failed_protocol(2, D)
    raise ConfigError(f"protocol: unknown {name!r}")


def build_scheduler(d: dict, seed: int) -> Scheduler:
    kind = d["kind"]
    if kind == "scripted":
        if "file" in d:
            script = parse_schedule_file(d["file"])
        else:
            script = tuple(None if s is None or s == "*" else tuple(s) for s in d.get("script", ()))
        return Scheduler(kind="scripted", script=script)
    return Scheduler(kind=kind, seed=seed, B=int(d.get("B", 1)))


def initial_config(policy, protocol: ProtocolSpec, n: int, seed: int) -> tuple:
    if policy == "q0":
        return (protocol.initial_state,) * n
    if policy == "random":
        rng = np.random.default_rng([seed, 0x1A17])
        return tuple(protocol.sample_state(rng) for _ in range(n))
    path = policy["file"]
    if protocol.parse_state is None:
        raise ConfigError("init.file: protocol has no state parser")
    with open(path) as fh:
        tokens = [t for line in fh for t in line.split("#", 1)[0].split()]
    if len(tokens) != n:
        raise ConfigError(f"init.file: {len(tokens)} states for {n} nodes")
    try:
        return tuple(protocol.parse_state(t) for t in tokens)
    except ValueError as exc:
        raise ConfigError(f"init.file: {exc}") from None


def task_of(protocol: str) -> str:
    return {"au": "AU", "failed-au": "AU", "mis": "MIS", "sync-mis": "MIS", "le": "LE", "sync-le": "LE"}[protocol]


def default_window(protocol: str, D: int) -> int:
    if task_of(protocol) == "AU":
        return 4 * 2 * unison.k_of(D)
    return 2 * D + 4


# ----------------------------------------------------------------- runs

def au_run(g: Graph, D: int, scheduler: Scheduler, init, seed: int, budget_rounds: int,
           window: int | None = None, liveness=(1, 3), require_good: bool = True,
           monitors: bool = True) -> dict:
    """AlgAU run: stabilization is the first round from which the graph stays good."""
    proto = unison.au_protocol(D, require_good=require_good)
    k = unison.k_of(D)
    W = window or 4 * 2 * k
    mon = AUMonitor(D) if monitors else AUMonitor(D, enabled=())
    on_step, log = attach_monitors(g, init, [mon])
    stop = HoldsFor(lambda c: mon.good, W, max_rounds=budget_rounds + W)
    trace = run(g, proto, scheduler, init, stop, seed, on_step=on_step)
    rec = {"seed": seed, "steps": trace.steps, "rounds": trace.completed_rounds,
           "monitors": log.summary(), "violations": [v.to_dict() for v in log.violations[:20]]}
    start = stop.start_round if trace.status == "stopped" else None
    rec["stabilized"] = start is not None and start <= budget_rounds
    rec["stabilization_round"] = start
    rec["first_good_step"] = mon.first_good
    rec["post_violations"] = []
    if start is None:
        return rec
    t0 = trace.rounds[start]
    for t in range(t0, trace.steps + 1):
        cfg = trace.configs[t]
        if any(q.faulty for q in cfg):
            rec["post_violations"].append({"monitor": "au_safety", "step": t, "detail": "faulty turn"})
            continue
        e = check_au_safety(cfg, g, k)
        if e is not None:
            rec["post_violations"].append({"monitor": "au_safety", "step": t, "nodes": list(e)})
    # liveness at round boundaries and mid-round points inside the window
    samples = []
    for i in range(start, trace.completed_rounds + 1):
        samples.append(trace.rounds[i])
        if i + 1 <= trace.completed_rounds and trace.rounds[i + 1] - trace.rounds[i] > 1:
            samples.append((trace.rounds[i] + trace.rounds[i + 1]) // 2)
    checked = 0
    for t in samples:
        for i in liveness:
            if rho(trace, t, g.diameter + i) is None:
                continue
            res = check_au_liveness(trace, t, i, k)
            checked += 1
            if not res.ok:
                rec["post_violations"].append({"monitor": "au_liveness", "step": t, "i": i,
                                               "nodes": res.starving, "bad": res.bad_changes[:5]})
    rec["liveness_checks"] = checked
    post = [v for v in log.violations if v.step >= t0]
    rec["post_violations"] += [v.to_dict() for v in post]
    return rec


class _FixedValid:
    """Predicate: output valid for the task and unchanged since the previous call."""

    def __init__(self, checker: TaskChecker, out_of):
        self.checker = checker
        self.out_of = out_of
        self.prev = None

    def __call__(self, cfg) -> bool:
        out = self.out_of(cfg)
        ok = self.checker.valid(cfg, out) and (self.prev is None or out == self.prev)
        self.prev = out
        return ok


def static_run(g: Graph, protocol: ProtocolSpec, task: str, scheduler: Scheduler, init, seed: int,
               budget_rounds: int, window: int, D: int, au_monitors: bool = False) -> dict:
    """MIS/LE run (direct or synchronized), stopping after ``window`` rounds of fixed valid output."""
    checker = TaskChecker(task, window, g)
    pred = _FixedValid(checker, protocol.output_vector)
    stop = HoldsFor(pred, window, max_rounds=budget_rounds + window)
    monitors = []
    if au_monitors:
        monitors.append(AUMonitor(D, clock=lambda s: s[2]))
    on_step, log = attach_monitors(g, init, monitors)
    trace = run(g, protocol, scheduler, init, stop, seed, on_step=on_step if monitors else None)
    rep = measure_stabilization(trace, checker)
    rec = {"seed": seed, "steps": trace.steps, "rounds": trace.completed_rounds,
           "stabilized": rep.stabilized and rep.stabilization_round <= budget_rounds,
           "stabilization_round": rep.stabilization_round,
           "output": list(protocol.output_vector(trace.configs[-1]) or []),
           "monitors": log.summary(), "violations": [v.to_dict() for v in log.violations[:20]],
           "post_violations": []}
    rec["_trace"] = trace
    return rec


def run_one(cfg: ExperimentConfig, seed: int) -> dict:
    gspec = dict(cfg.graph)
    if cfg.vary_graph:
        gspec["seed"] = gspec.get("seed", 0) + seed
    try:
        g = build_graph(GraphSpec.from_dict(gspec))
    except GraphError as exc:
        raise ConfigError(f"graph: {exc}") from None
    D = diameter_bound(cfg, g)
    W = cfg.window or default_window(cfg.protocol, D)
    sched = build_scheduler(cfg.scheduler, seed)
    t_start = time.perf_counter()
    if cfg.protocol == "au":
        proto = unison.au_protocol(D)
        init = initial_config(cfg.init, proto, g.n, seed)
        rec = au_run(g, D, sched, init, seed, cfg.budget_rounds, W, tuple(cfg.liveness))
    elif cfg.protocol == "failed-au":
        proto = failed_protocol(2, D)
        init = initial_config(cfg.init, proto, g.n, seed)
        rec = failed_run(g, proto, sched, init, seed, cfg.budget_rounds, W)
    else:
        proto = build_protocol(cfg.protocol, D, cfg.params)
        init = initial_config(cfg.init, proto, g.n, seed)
        rec = static_run(g, proto, task_of(cfg.protocol), sched, init, seed, cfg.budget_rounds, W, D,
                         au_monitors=cfg.protocol.startswith("sync-"))
        rec.pop("_trace", None)
    rec["graph"] = {"name": g.name, "n": g.n, "diameter": g.diameter}
    rec["D"] = D
    if cfg.timing:
        rec["wall_time"] = round(time.perf_counter() - t_start, 4)
    return rec


def failed_run(g, proto, sched, init, seed, budget_rounds, W) -> dict:
    top = proto.params["c"] * proto.params["D"]
    m = top + 1

    def settled(cfg):
        if any(q.tag != "M" for q in cfg):
            return False
        return all(min((cfg[u].level - cfg[v].level) % m, (cfg[v].level - cfg[u].level) % m) <= 1
                   for u, v in g.edges)

    stop = HoldsFor(settled, W, max_rounds=budget_rounds + W)
    trace = run(g, proto, sched, init, stop, seed)
    start = stop.start_round if trace.status == "stopped" else None
    return {"seed": seed, "steps": trace.steps, "rounds": trace.completed_rounds,
            "stabilized": start is not None and start <= budget_rounds,
            "stabilization_round": start, "monitors": {}, "violations": [], "post_violations": []}


# ------------------------------------------------------------ aggregation

def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("STONEAGE_WORKERS", "1")))
    except ValueError:
        return 1


def _run_one_packed(args):
    cfg_dict, seed = args
    return run_one(ExperimentConfig.from_dict(cfg_dict), seed)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    workers = workers or _worker_count()
    if workers > 1 and len(cfg.seeds) > 1:
        packed = [(_raw(cfg), s) for s in cfg.seeds]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one_packed, packed))
    else:
        records = [run_one(cfg, s) for s in cfg.seeds]
    records.sort(key=lambda r: r["seed"])
    return {"config": _raw(cfg), "runs": records, "aggregate": aggregate(records)}


def _raw(cfg: ExperimentConfig) -> dict:
    d = cfg.to_dict()
    return copy.deepcopy(d)


def aggregate(records: list[dict]) -> dict:
    rounds = [r["stabilization_round"] for r in records if r["stabilized"]]
    monitor_totals: dict = {}
    for r in records:
        for name, c in r.get("monitors", {}).items():
            monitor_totals[name] = monitor_totals.get(name, 0) + c["violations"]
    return {
        "runs": len(records),
        "stabilized": sum(1 for r in records if r["stabilized"]),
        "median_round": statistics.median(rounds) if rounds else None,
        "max_round": max(rounds) if rounds else None,
        "monitor_violations": monitor_totals,
        "post_violations": sum(len(r["post_violations"]) for r in records),
    }


def exit_code(report: dict) -> int:
    agg = report["aggregate"]
    if agg["post_violations"]:
        return 1
    if report["config"].get("hard_budget") and agg["stabilized"] < agg["runs"]:
        return 3
    return 0


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1, default=str) + "\n"


SWEEP_AXES = ("n", "D", "B")


def sweep(cfg: ExperimentConfig, axis: str, values: list, workers: int | None = None) -> dict:
    """One aggregate row per axis value."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis: must be one of {list(SWEEP_AXES)}")
    rows = []
    for val in values:
        c = copy.deepcopy(cfg)
        if axis == "n":
            c.graph = {**c.graph, "n": int(val)}
        elif axis == "D":
            c.D = int(val)
            c.graph = {**c.graph, "D": int(val)}
        else:
            c.scheduler = {**c.scheduler, "kind": "random-fair", "B": int(val)}
        c.validate()
        rep = run_experiment(c, workers)
        agg = rep["aggregate"]
        rows.append({"axis": axis, "value": val, **{k: agg[k] for k in
                     ("runs", "stabilized", "median_round", "max_round", "post_violations")}})
    return {"config": _raw(cfg), "axis": axis, "rows": rows}


def sweep_csv(result: dict) -> str:
    buf = io.StringIO()
    cols = ["axis", "value", "runs", "stabilized", "median_round", "max_round", "post_violations"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in result["rows"]:
        w.writerow({c: r[c] for c in cols})
    return buf.getvalue()

