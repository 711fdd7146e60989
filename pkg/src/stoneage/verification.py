"""Task checkers, stabilization measurement and per-step invariant monitors.

Checkers read only output values and the graph.  Monitors may read full
states; they observe ``(before, activated, after)`` for every step and never
mutate the trace.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .engine import BudgetExceeded, Trace, rho, rounds_elapsed
from .topology import Graph
from . import unison
from .restart import is_sigma, sigma


class NotOutputConfiguration(ValueError):
    pass


# ------------------------------------------------------------------- checkers

def check_au_safety(config: Sequence, g: Graph, k: int):
    """``None`` if every edge's clocks are within one forward step, else the edge."""
    if any(q.faulty for q in config):
        raise NotOutputConfiguration("not an output configuration (faulty turn present)")
    for u, v in g.edges:
        if not unison.adjacent(config[u].level, config[v].level, k):
            return (u, v)
    return None


@dataclass
class LivenessResult:
    ok: bool
    window: tuple[int, int]
    increments: list[int]
    starving: list[int] = field(default_factory=list)
    bad_changes: list[tuple[int, int]] = field(default_factory=list)  # (step, node)


def check_au_liveness(trace: Trace, t: int, i: int, k: int, clock=lambda q: q) -> LivenessResult:
    """Every node advances its clock at least ``i`` times in ``[t, rho^{diam+i}(t))``.

    ``clock`` projects a state to its AlgAU turn (identity for AlgAU itself).
    Only output-to-output changes are visible; any such change that is not a
    single forward step is reported.
    """
    end = rho(trace, t, trace.graph.diameter + i)
    if end is None:
        raise BudgetExceeded(f"trace too short for a liveness window of {trace.graph.diameter + i} rounds at t={t}")
    n = trace.graph.n
    inc = [0] * n
    last = [clock(q) for q in trace.configs[t]]
    last_out = [None if x.faulty else x.level for x in last]
    bad = []
    for s in range(t, end):
        after = trace.configs[s + 1]
        for v in trace.activations[s]:
            x = clock(after[v])
            if x.faulty:
                continue
            prev = last_out[v]
            if prev is not None and x.level != prev:
                if x.level == unison.forward(prev, k):
                    inc[v] += 1
                else:
                    bad.append((s, v))
            last_out[v] = x.level
    starving = [v for v in range(n) if inc[v] < i]
    return LivenessResult(not starving and not bad, (t, end), inc, starving, bad)


def check_mis(output: Sequence[int], g: Graph) -> str | None:
    for u, v in g.edges:
        if output[u] == 1 and output[v] == 1:
            return f"independence violated on edge ({u}, {v})"
    for v in range(g.n):
        if output[v] == 0 and not any(output[u] == 1 for u in g.adjacency[v]):
            return f"maximality violated at node {v}"
    return None


def check_le(output: Sequence[int]) -> str | None:
    c = sum(output)
    if c == 1:
        return None
    return "no leader" if c == 0 else "multiple leaders"


# ------------------------------------------------------------ stabilization

@dataclass
class StabilizationReport:
    stabilized: bool
    stabilization_round: int | None
    stabilization_step: int | None
    steps_used: int
    rounds_used: int
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stabilized": self.stabilized, "stabilization_round": self.stabilization_round,
                "stabilization_step": self.stabilization_step, "steps_used": self.steps_used,
                "rounds_used": self.rounds_used, "violations": len(self.violations)}


@dataclass
class TaskChecker:
    """``task`` in ``AU | LE | MIS``; ``W`` rounds of sustained validity."""

    task: str
    window: int
    g: Graph
    k: int | None = None
    clock: Callable = staticmethod(lambda q: q)

    @property
    def static(self) -> bool:
        return self.task in ("LE", "MIS")

    def valid(self, config, output) -> bool:
        if self.task == "AU":
            turns = [self.clock(q) for q in config]
            if any(q.faulty for q in turns):
                return False
            return check_au_safety(turns, self.g, self.k) is None
        if output is None:
            return False
        if self.task == "MIS":
            return check_mis(output, self.g) is None
        return check_le(output) is None


def measure_stabilization(trace: Trace, checker: TaskChecker,
                          output_of: Callable | None = None) -> StabilizationReport:
    """Smallest ``i`` with validity at every step in ``[R(i), R(i+W)]``.

    Static tasks additionally need the output vector to stay fixed over that
    window.
    """
    proto = trace.protocol
    out_of = output_of or proto.output_vector
    T = trace.steps
    bad = []
    prev = None
    for t in range(T + 1):
        cfg = trace.configs[t]
        out = out_of(cfg)
        ok = checker.valid(cfg, out)
        bad.append(0 if ok else 1)
        if checker.static:
            changed = t > 0 and out != prev
            bad[-1] = bad[-1] | (2 if changed else 0)
        prev = out
    # prefix sums of invalid configs and of output changes
    inv = [0]
    chg = [0]
    for b in bad:
        inv.append(inv[-1] + (b & 1))
        chg.append(chg[-1] + ((b >> 1) & 1))
    R = trace.rounds
    W = checker.window
    for i in range(len(R)):
        if i + W >= len(R):
            break
        a, b = R[i], R[i + W]
        if inv[b + 1] - inv[a] == 0 and chg[b + 1] - chg[a + 1] == 0:
            return StabilizationReport(True, i, a, T, trace.completed_rounds)
    return StabilizationReport(False, None, None, T, trace.completed_rounds)


# ---------------------------------------------------------------- monitors

@dataclass
class Violation:
    monitor: str
    step: int
    nodes: list
    detail: str

    def to_dict(self) -> dict:
        return {"monitor": self.monitor, "step": self.step, "nodes": list(self.nodes), "detail": self.detail}


class Monitor:
    name = "monitor"
    names: tuple = ()

    def start(self, g: Graph, config: Sequence) -> None:
        pass

    def observe(self, t: int, before: Sequence, act: Sequence[int], after: Sequence) -> list[Violation]:
        return []


@dataclass
class MonitorLog:
    violations: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def summary(self) -> dict:
        names = sorted(set(self.checks) | set(self.failures))
        return {n: {"checked": self.checks.get(n, 0), "violations": self.failures.get(n, 0)} for n in names}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(v.to_dict(), sort_keys=True) + "\n" for v in self.violations)


def attach_monitors(g: Graph, init: Sequence, monitors: Iterable[Monitor],
                    max_logged: int = 1000) -> tuple[Callable, MonitorLog]:
    """Return an ``on_step`` callback for :func:`engine.run` and the log it fills."""
    monitors = list(monitors)
    log = MonitorLog()
    for m in monitors:
        m.start(g, init)
        for n in m.names or (m.name,):
            log.checks.setdefault(n, 0)
            log.failures.setdefault(n, 0)

    def on_step(t, before, act, after):
        for m in monitors:
            for n in m.names or (m.name,):
                log.checks[n] += 1
            for v in m.observe(t, before, act, after):
                log.failures[v.monitor] = log.failures.get(v.monitor, 0) + 1
                if len(log.violations) < max_logged:
                    log.violations.append(v)

    return on_step, log


AU_MONITORS = ("obs1", "obs3", "obs4", "obs5", "obs9", "lemma1", "lemma9")


class AUMonitor(Monitor):
    """Incremental AlgAU invariant checks; only nodes near a change are re-evaluated.

    ``clock`` projects states to turns so the same monitor runs on the clock
    coordinate of a synchronized protocol.
    """

    name = "au"

    def __init__(self, D: int, enabled: Iterable[str] = AU_MONITORS, clock=None):
        self.D = D
        self.k = unison.k_of(D)
        self.enabled = set(enabled)
        self.names = tuple(n for n in AU_MONITORS if n in self.enabled)
        self.clock = clock

    def _turns(self, config):
        return config if self.clock is None else [self.clock(q) for q in config]

    def _view(self, turns, v):
        return unison.local_view(turns[v], frozenset([turns[v]] + [turns[u] for u in self.g.adjacency[v]]), self.k)

    def start(self, g, config):
        self.g = g
        turns = self._turns(config)
        self.views = [self._view(turns, v) for v in range(g.n)]
        self.not_protected = sum(1 for x in self.views if not x.protected)
        self.not_good = sum(1 for x in self.views if not x.good)
        self.not_op = sum(1 for x in self.views if not x.out_protected)
        self.op_epoch = self.not_op == 0
        self.first_good = 0 if self.not_good == 0 else None
        self.t = 0

    @property
    def good(self) -> bool:
        return self.not_good == 0

    def observe(self, t, before, act, after):
        out = []
        tb = self._turns(before) if self.clock else before
        ta = self._turns(after) if self.clock else after
        changed = [v for v in act if tb[v] != ta[v]]
        self.t = t + 1
        if not changed:
            return out
        k, g, en = self.k, self.g, self.enabled
        was_good = self.not_good == 0
        was_op_epoch = self.op_epoch
        affected = set(changed)
        for v in changed:
            affected.update(g.adjacency[v])
        old = {v: self.views[v] for v in affected}
        for v in affected:
            nv = self._view(ta, v)
            ov = old[v]
            self.not_protected += (not nv.protected) - (not ov.protected)
            self.not_good += (not nv.good) - (not ov.good)
            self.not_op += (not nv.out_protected) - (not ov.out_protected)
            self.views[v] = nv
            if "obs3" in en and ov.out_protected and not nv.out_protected:
                out.append(Violation("obs3", t, [v], "out-protected node lost out-protection"))
            if "lemma9" in en and was_op_epoch and not ov.unjustifiably_faulty and nv.unjustifiably_faulty:
                out.append(Violation("lemma9", t, [v], f"became unjustifiably faulty at {unison.format_turn(ta[v])}"))
        seen_edges = set()
        for u in changed:
            lu0, lu1 = tb[u].level, ta[u].level
            if "obs4" in en and lu0 != lu1 and not self.views[u].out_protected:
                out.append(Violation("obs4", t, [u], f"level {lu0}->{lu1} without out-protection"))
            for w in g.adjacency[u]:
                e = (min(u, w), max(u, w))
                if e in seen_edges:
                    continue
                seen_edges.add(e)
                a0, b0, a1, b1 = tb[e[0]].level, tb[e[1]].level, ta[e[0]].level, ta[e[1]].level
                prot0 = unison.adjacent(a0, b0, k)
                if "obs1" in en and prot0 and {a0, b0} != {-k, k} and not unison.adjacent(a1, b1, k):
                    out.append(Violation("obs1", t, list(e), f"edge levels {a0},{b0} -> {a1},{b1}"))
                if "obs5" in en and not prot0:
                    (x0, x1), (y0, y1) = ((a0, a1), (b0, b1)) if a0 < b0 else ((b0, b1), (a0, a1))
                    if not (x0 <= x1 < y1 <= y0):
                        out.append(Violation("obs5", t, list(e), f"levels {x0}<{y0} became {x1},{y1}"))
        if "obs9" in en and self.not_protected == 0:
            span = unison.level_span({q.level for q in ta}, k)
            if span > g.diameter:
                out.append(Violation("obs9", t, [], f"protected graph spans {span} > diameter {g.diameter}"))
        if "lemma1" in en and was_good and self.not_good != 0:
            bad = [v for v in range(g.n) if not self.views[v].good]
            out.append(Violation("lemma1", t, bad, "good graph stopped being good"))
        if self.not_op == 0:
            self.op_epoch = True
        if self.first_good is None and self.not_good == 0:
            self.first_good = t + 1
        return out


class AUSafetyMonitor(Monitor):
    """Neighbouring outputs within one forward step, from ``from_step`` on."""

    name = "au_safety"

    def __init__(self, D: int, from_step: int = 0, clock=None):
        self.k = unison.k_of(D)
        self.from_step = from_step
        self.clock = clock or (lambda q: q)

    def start(self, g, config):
        self.g = g

    def observe(self, t, before, act, after):
        if t + 1 < self.from_step:
            return []
        turns = [self.clock(q) for q in after]
        try:
            e = check_au_safety(turns, self.g, self.k)
        except NotOutputConfiguration as exc:
            return [Violation(self.name, t, [], str(exc))]
        return [] if e is None else [Violation(self.name, t, list(e), "clocks more than one step apart")]


# ------------------------------------------------------- restart checks

def restart_exit(configs: Sequence, D: int, q0) -> tuple[int | None, int | None]:
    """``(t0, t)``: first time a restart state is present, first concurrent exit step."""
    t0 = next((t for t, c in enumerate(configs) if any(is_sigma(q) for q in c)), None)
    if t0 is None:
        return None, None
    top = sigma(2 * D)
    for t in range(t0, len(configs) - 1):
        if all(q == top for q in configs[t]) and all(q == q0 for q in configs[t + 1]):
            return t0, t
    return t0, None


def check_restart_lemmas(configs: Sequence, g: Graph, D: int) -> list[Violation]:
    """Growing-ball and index-window properties of the restart chain (synchronous)."""
    out = []
    T = len(configs) - 1
    for t, cfg in enumerate(configs):
        for v in range(g.n):
            if cfg[v] != sigma(0):
                continue
            for d in range(D + 1):
                if t + d > T:
                    break
                for u in range(g.n):
                    if g.dist[u, v] <= d:
                        q = configs[t + d][u]
                        if not (is_sigma(q) and q.i <= d):
                            out.append(Violation("lemma16", t + d, [v, u], f"{q} at distance {int(g.dist[u, v])} after {d} steps"))
        if all(is_sigma(q) and q.i <= D for q in cfg):
            jmin = min(q.i for q in cfg)
            vmins = [v for v in range(g.n) if cfg[v].i == jmin]
            for h in range(D + 1):
                if t + h > T:
                    break
                for u, q in enumerate(configs[t + h]):
                    if not (is_sigma(q) and jmin + h <= q.i <= D + h):
                        out.append(Violation("lemma17", t + h, [u], f"{q} outside [{jmin + h}, {D + h}]"))
                for vm in vmins:
                    ball = {configs[t + h][u] for u in range(g.n) if g.dist[vm, u] <= h}
                    if ball != {sigma(jmin + h)}:
                        out.append(Violation("lemma18", t + h, [vm], f"ball of radius {h} holds {sorted(map(str, ball))}"))
    return out


# --------------------------------------------------------------- MIS checks

def mis_phase_starts(configs: Sequence, D: int) -> list[int]:
    """Times at which every node starts a clean phase (the whole graph at once)."""
    from .mis import initial_state
    q0 = initial_state()
    starts = []
    for t, cfg in enumerate(configs):
        if any(is_sigma(q) for q in cfg):
            continue
        if not all(q.flag == 1 and q.step == 0 for q in cfg):
            continue
        if not all(q == q0 or q.tag != "U" for q in cfg):
            continue
        if t > 0:
            prev = configs[t - 1]
            if not (all(is_sigma(q) for q in prev) or all((not is_sigma(q)) and q.step == D + 2 for q in prev)):
                continue
        starts.append(t)
    return starts


@dataclass
class PhaseRecord:
    start: int
    end: int
    undecided: list
    coins: dict            # v -> list of coins per completed trial
    cand: dict             # v -> list of candidate bits at the start of each trial
    joined_in: set
    joined_out: set


def mis_phases(configs: Sequence, g: Graph, D: int) -> list[PhaseRecord]:
    """Phase-by-phase coin logs of a synchronous AlgMIS trace (clean phases only)."""
    starts = mis_phase_starts(configs, D)
    phases = []
    for idx, s in enumerate(starts):
        e = starts[idx + 1] if idx + 1 < len(starts) else None
        if e is None:
            continue
        span = configs[s:e + 1]
        if any(is_sigma(q) for c in span for q in c):
            continue
        U = [v for v in range(g.n) if configs[s][v].tag == "U"]
        coins = {v: [] for v in U}
        cand = {v: [] for v in U}
        # a trial counts once its observe half runs; a toss left unobserved is no trial
        for t in range(s, e):
            for v in U:
                a = configs[t][v]
                if a.tag == "U" and a.tphase == "o" and a.step <= D:
                    coins[v].append(a.coin)
                    cand[v].append(a.cand)
        joined_in = {v for v in U if configs[e - 1][v].tag == "IN"}
        joined_out = {v for v in U if configs[e - 1][v].tag == "OUT"}
        phases.append(PhaseRecord(s, e, U, coins, cand, joined_in, joined_out))
    return phases


def z_value(coins: Sequence[int]) -> int:
    z = 0
    for c in coins:
        z = 2 * z + c
    return z


def z_oracle(phase: PhaseRecord, g: Graph) -> list[str]:
    """Literal coin-number rule: ``v`` joins IN iff ``Z(v) >= Z(u)`` for all undecided neighbours."""
    Uset = set(phase.undecided)
    bad = []
    lens = {len(c) for c in phase.coins.values()}
    if len(lens) > 1:
        bad.append(f"phase at {phase.start}: trial counts differ {sorted(lens)}")
        return bad
    Z = {v: z_value(phase.coins[v]) for v in phase.undecided}
    for v in phase.undecided:
        pred = all(Z[v] >= Z[u] for u in g.adjacency[v] if u in Uset)
        if pred != (v in phase.joined_in):
            bad.append(f"phase at {phase.start}: node {v} Z={Z[v]} nbrs="
                       f"{[Z[u] for u in g.adjacency[v] if u in Uset]} joined_in={v in phase.joined_in}")
    return bad


def candidacy_oracle(phase: PhaseRecord, g: Graph) -> list[str]:
    """Recompute candidacy trial by trial from the coin log and compare everything."""
    Uset = set(phase.undecided)
    bad = []
    cand = {v: 1 for v in phase.undecided}
    tau = len(next(iter(phase.coins.values()), []))
    for i in range(tau):
        for v in phase.undecided:
            if phase.cand[v][i] != cand[v]:
                bad.append(f"phase at {phase.start}: node {v} candidate {phase.cand[v][i]} at trial {i}, oracle {cand[v]}")
        nxt = {}
        for v in phase.undecided:
            hit = any(u in Uset and cand[u] == 1 and phase.coins[u][i] == 1 for u in g.adjacency[v])
            nxt[v] = 0 if (cand[v] == 1 and phase.coins[v][i] == 0 and hit) else cand[v]
        cand = nxt
    for v in phase.undecided:
        if (cand[v] == 1) != (v in phase.joined_in):
            bad.append(f"phase at {phase.start}: node {v} final candidate {cand[v]} but joined_in={v in phase.joined_in}")
        nbr_in = any(u in phase.joined_in for u in g.adjacency[v] if u in Uset)
        if v not in phase.joined_in and nbr_in != (v in phase.joined_out):
            bad.append(f"phase at {phase.start}: node {v} joined_out={v in phase.joined_out} with IN neighbour={nbr_in}")
    return bad


def z_dominance_oracle(phase: PhaseRecord, g: Graph) -> list[str]:
    """Sound direction only: ``Z(v) >= Z(u)`` for every undecided neighbour forces IN."""
    Uset = set(phase.undecided)
    Z = {v: z_value(phase.coins[v]) for v in phase.undecided}
    return [f"phase at {phase.start}: node {v} dominates its neighbours but stayed out"
            for v in phase.undecided
            if all(Z[v] >= Z[u] for u in g.adjacency[v] if u in Uset) and v not in phase.joined_in]


def check_lemma15(configs: Sequence, g: Graph, D: int) -> list[Violation]:
    """Step-gradient shape during the ``D`` rounds after the last flag clears."""
    out = []
    for s in mis_phase_starts(configs, D):
        t_star = None
        for t in range(s, len(configs)):
            cfg = configs[t]
            if any(is_sigma(q) for q in cfg):
                break
            if all(q.flag == 0 for q in cfg):
                t_star = t
                break
        if t_star is None or t_star == s or t_star + D >= len(configs):
            continue
        prev = configs[t_star - 1]
        vmax = [v for v in range(g.n) if prev[v].flag == 1]
        for d in range(D + 1):
            cfg = configs[t_star + d]
            for u, v in g.edges:
                if abs(cfg[u].step - cfg[v].step) > 1:
                    out.append(Violation("lemma15", t_star + d, [u, v], "invalid step edge"))
            for v in range(g.n):
                if cfg[v].step < d:
                    out.append(Violation("lemma15", t_star + d, [v], f"step {cfg[v].step} < {d}"))
                for m in vmax:
                    if cfg[v].step > max(d, int(g.dist[m, v])):
                        out.append(Violation("lemma15", t_star + d, [v, m], f"step {cfg[v].step} above bound"))
    return out
