"""Stone-age execution engine.

A protocol is a randomized finite state machine whose transition reads the
node's own state and the *set* of states present in its inclusive
neighbourhood.  The engine runs such a protocol on a :class:`Graph` under an
activation schedule chosen up front by an oblivious adversary, and records a
:class:`Trace` with the round boundaries ``R(0), R(1), ...``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterator, Sequence

import numpy as np

from .topology import Graph

State = Hashable
Signal = frozenset
"""Presence set of the states sensed over ``N+(v)``: no counts, no identities."""


class ProtocolError(RuntimeError):
    """A transition function broke its contract (empty or foreign candidates)."""


class BudgetExceeded(RuntimeError):
    pass


# ------------------------------------------------------------------ protocols

@dataclass(eq=False)
class ProtocolSpec:
    """``<Q, Q_O, omega, delta>`` plus the restart re-entry state ``q*_0``.

    ``delta(state, signal)`` returns a non-empty tuple of candidate next
    states; the engine picks one uniformly *by position*, so a candidate may
    be repeated to encode a rational coin bias.  ``states`` is a sequence in
    canonical order (it may be lazy, see :class:`ProductStates`).
    """

    name: str
    states: Sequence[State]
    delta: Callable[[State, Signal], tuple]
    is_output: Callable[[State], bool]
    output_map: Callable[[State], Any]
    initial_state: State | None = None
    format_state: Callable[[State], str] = str
    parse_state: Callable[[str], State] | None = None
    params: dict = field(default_factory=dict)
    cache_limit: int = 2_000_000
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def output_states(self) -> list[State]:
        return [q for q in self.states if self.is_output(q)]

    def candidates(self, state: State, signal: Signal) -> tuple:
        key = (state, signal)
        try:
            return self._cache[key]
        except KeyError:
            pass
        cands = tuple(self.delta(state, signal))
        if not cands:
            raise ProtocolError(
                f"{self.name}: delta returned no candidates for state {self.format_state(state)} "
                f"under signal {{{', '.join(sorted(self.format_state(q) for q in signal))}}}")
        for c in cands:
            if c not in self.states:
                raise ProtocolError(f"{self.name}: delta produced {c!r}, which is not a state")
        if len(self._cache) >= self.cache_limit:
            self._cache.clear()
        self._cache[key] = cands
        return cands

    def index_of(self, state: State) -> int:
        return self.states.index(state)

    def sample_state(self, rng: np.random.Generator) -> State:
        return self.states[int(rng.integers(len(self.states)))]

    def output_vector(self, config: Sequence[State]) -> tuple | None:
        """``omega o C`` or ``None`` when ``config`` is not an output configuration."""
        if not all(self.is_output(q) for q in config):
            return None
        return tuple(self.output_map(q) for q in config)


class IndexedList(list):
    """List with O(1) ``index``."""

    def __init__(self, items):
        super().__init__(items)
        self._pos = {x: i for i, x in enumerate(self)}

    def index(self, value, *args) -> int:
        try:
            return self._pos[value]
        except (KeyError, TypeError):
            raise ValueError(f"{value!r} is not in list") from None

    def __contains__(self, value) -> bool:
        try:
            return value in self._pos
        except TypeError:
            return False


class ProductStates(Sequence):
    """Lazy Cartesian product with mixed-radix canonical indexing."""

    def __init__(self, *factors: Sequence):
        self.factors = factors
        self._len = 1
        for f in factors:
            self._len *= len(f)

    def __len__(self) -> int:
        return self._len

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self._len))]
        if i < 0:
            i += self._len
        if not 0 <= i < self._len:
            raise IndexError(i)
        out = []
        for f in reversed(self.factors):
            i, r = divmod(i, len(f))
            out.append(f[r])
        return tuple(reversed(out))

    def index(self, value, *args) -> int:
        if not isinstance(value, tuple) or len(value) != len(self.factors):
            raise ValueError(f"{value!r} is not in product")
        i = 0
        for f, x in zip(self.factors, value):
            i = i * len(f) + f.index(x)
        return i

    def __contains__(self, value) -> bool:
        try:
            self.index(value)
        except ValueError:
            return False
        return True


# --------------------------------------------------------------------- signals

def compute_signal(config: Sequence[State], g: Graph, v: int) -> Signal:
    """Set of states present in ``N+(v)`` under ``config``."""
    return frozenset([config[v]] + [config[u] for u in g.adjacency[v]])


def signal_bits(signal: Signal, protocol: ProtocolSpec) -> list[int]:
    """Dense presence vector over the protocol's canonical state order."""
    bits = [0] * protocol.num_states
    for q in signal:
        bits[protocol.index_of(q)] = 1
    return bits


# ------------------------------------------------------------------------ RNG

class NodeStreams:
    """Independent per-node random streams derived from one root seed.

    Each node owns a counter-based Philox stream keyed by ``(seed, node)``;
    a node consumes a draw only when its transition has several candidates,
    so changing who is activated never perturbs anybody else's draws.
    """

    def __init__(self, seed: int, n: int, salt: int = 0):
        self.seed = seed
        self._gens = []
        for v in range(n):
            key = np.random.SeedSequence([seed, salt, v]).generate_state(2, np.uint64)
            self._gens.append(np.random.Generator(np.random.Philox(key=key)))

    def pick(self, v: int, k: int) -> int:
        return int(self._gens[v].random() * k)


# ------------------------------------------------------------------- schedules

@dataclass(frozen=True)
class Scheduler:
    """Oblivious activation schedule.

    Kinds: ``synchronous``, ``round-robin`` (one node per step in id order),
    ``random-fair`` (random non-empty subset, then every node idle for
    ``B-1`` steps is forced in) and ``scripted`` (explicit list of steps,
    ``None`` meaning all nodes, repeated cyclically).
    """

    kind: str = "synchronous"
    seed: int = 0
    B: int = 1
    script: tuple = ()

    def __post_init__(self):
        if self.kind not in ("synchronous", "round-robin", "random-fair", "scripted"):
            raise ValueError(f"unknown scheduler kind {self.kind!r}")
        if self.kind == "random-fair" and self.B < 1:
            raise ValueError("random-fair needs B >= 1")
        if self.kind == "scripted" and not self.script:
            raise ValueError("scripted scheduler needs a non-empty script")

    @classmethod
    def from_dict(cls, d: dict) -> "Scheduler":
        d = dict(d)
        if "script" in d:
            d["script"] = tuple(None if s is None else tuple(s) for s in d["script"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed, "B": self.B}
        if self.kind == "scripted":
            d["script"] = [None if s is None else list(s) for s in self.script]
        return d

    def fairness_bound(self, n: int) -> int:
        if self.kind == "synchronous":
            return 1
        if self.kind == "round-robin":
            return n
        if self.kind == "random-fair":
            return self.B
        return scripted_fairness_bound(self.script, n)

    def activations(self, n: int) -> Iterator[tuple[int, ...]]:
        """Infinite activation sequence; a pure function of ``(kind, seed, n)``."""
        everyone = tuple(range(n))
        if self.kind == "synchronous":
            while True:
                yield everyone
        elif self.kind == "round-robin":
            while True:
                for v in range(n):
                    yield (v,)
        elif self.kind == "scripted":
            while True:
                for s in self.script:
                    yield everyone if s is None else tuple(sorted(set(s)))
        else:
            rng = np.random.default_rng([self.seed, 0x5C4ED])
            last = [-1] * n
            t = 0
            while True:
                while True:
                    mask = rng.integers(0, 2, size=n)
                    if mask.any():
                        break
                chosen = {v for v in range(n) if mask[v]}
                chosen.update(v for v in range(n) if t - last[v] >= self.B - 1)
                for v in chosen:
                    last[v] = t
                yield tuple(sorted(chosen))
                t += 1


def scripted_fairness_bound(script: Sequence, n: int) -> int:
    """Longest run of steps (cyclically) in which some node is not activated, plus one."""
    L = len(script)
    worst = 0
    for v in range(n):
        hits = [i for i, s in enumerate(script) if s is None or v in s]
        if not hits:
            return 0
        gaps = [(hits[(j + 1) % len(hits)] - hits[j]) % L or L for j in range(len(hits))]
        worst = max(worst, max(gaps))
    return worst


def parse_schedule_file(path: str) -> tuple:
    """One step per line: comma-separated node ids, ``*`` for all, blank for none."""
    steps = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if raw.lstrip().startswith("#"):
                continue
            if line == "*":
                steps.append(None)
            elif not line:
                steps.append(())
            else:
                try:
                    steps.append(tuple(int(x) for x in line.split(",") if x.strip()))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad node list {raw.strip()!r}") from None
    return tuple(steps)


# ---------------------------------------------------------------------- traces

@dataclass
class Trace:
    graph: Graph
    protocol: ProtocolSpec
    scheduler: Scheduler
    seed: int
    configs: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    draws: list = field(default_factory=list)
    rounds: list = field(default_factory=lambda: [0])
    status: str = "running"

    @property
    def steps(self) -> int:
        return len(self.activations)

    @property
    def completed_rounds(self) -> int:
        return len(self.rounds) - 1

    def config(self, t: int) -> tuple:
        return self.configs[t]

    def header(self) -> dict:
        return {
            "protocol": self.protocol.name,
            "params": self.protocol.params,
            "graph": self.graph.to_dict(),
            "scheduler": self.scheduler.to_dict(),
            "seed": self.seed,
            "init": [self.protocol.format_state(q) for q in self.configs[0]],
            "R": list(self.rounds),
            "status": self.status,
        }

    def to_jsonl(self) -> str:
        index = self.protocol.index_of
        lines = [json.dumps(self.header(), sort_keys=True)]
        for t, act in enumerate(self.activations):
            rec = {"t": t, "activated": list(act), "states": [index(q) for q in self.configs[t + 1]]}
            if self.draws[t]:
                rec["draws"] = [[v, i] for v, i in self.draws[t]]
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + "\n"


def rounds_elapsed(trace: Trace, t: int) -> int:
    """The ``i`` with ``R(i) <= t < R(i+1)`` (the last, possibly open, round at the end)."""
    if not 0 <= t <= trace.steps:
        raise IndexError(f"time {t} outside trace [0, {trace.steps}]")
    lo, hi = 0, len(trace.rounds) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if trace.rounds[mid] <= t:
            lo = mid
        else:
            hi = mid - 1
    return lo


def rho(trace: Trace, t: int, i: int = 1) -> int | None:
    """``rho^i(t)``: earliest time by which every node was activated ``i`` times in turn.

    Returns ``None`` when the trace ends first.
    """
    n = trace.graph.n
    for _ in range(i):
        pending = set(range(n))
        s = t
        while pending:
            if s >= trace.steps:
                return None
            pending.difference_update(trace.activations[s])
            s += 1
        t = s
    return t


# ------------------------------------------------------------------- execution

def step(config: Sequence[State], g: Graph, protocol: ProtocolSpec,
         activation_set: Sequence[int], streams: NodeStreams | None,
         draws: list | None = None) -> tuple:
    """One simultaneous step: activated nodes read the pre-step configuration."""
    nxt = list(config)
    adjacency = g.adjacency
    for v in activation_set:
        sig = frozenset([config[v]] + [config[u] for u in adjacency[v]])
        cands = protocol.candidates(config[v], sig)
        if len(cands) == 1:
            nxt[v] = cands[0]
        else:
            if streams is None:
                raise ProtocolError(f"{protocol.name}: randomized transition without an RNG")
            i = streams.pick(v, len(cands))
            nxt[v] = cands[i]
            if draws is not None:
                draws.append((v, i))
    return tuple(nxt)


class StopCondition:
    """Base class; ``done`` is polled after every step."""

    max_steps: int | None = None
    max_rounds: int | None = None

    def reset(self) -> None:
        pass

    def begin(self, trace: Trace) -> None:
        pass

    def done(self, trace: Trace, new_round: bool) -> bool:
        return False

    def exhausted(self, trace: Trace) -> bool:
        if self.max_steps is not None and trace.steps >= self.max_steps:
            return True
        if self.max_rounds is not None and trace.completed_rounds >= self.max_rounds:
            return True
        return False


class MaxSteps(StopCondition):
    def __init__(self, steps: int):
        self.max_steps = steps

    def done(self, trace, new_round):
        return trace.steps >= self.max_steps


class MaxRounds(StopCondition):
    def __init__(self, rounds: int, max_steps: int | None = None):
        self.max_rounds = rounds
        self.max_steps = max_steps

    def done(self, trace, new_round):
        return trace.completed_rounds >= self.max_rounds


class HoldsFor(StopCondition):
    """Stop once ``predicate(config)`` held at every step from ``R(i)`` through ``R(i+W)``."""

    def __init__(self, predicate: Callable[[tuple], bool], window: int,
                 max_rounds: int, max_steps: int | None = None):
        self.predicate = predicate
        self.window = window
        self.max_rounds = max_rounds
        self.max_steps = max_steps
        self.reset()

    def reset(self):
        self.start_round: int | None = None

    def begin(self, trace):
        if self.predicate(trace.configs[0]):
            self.start_round = 0

    def done(self, trace, new_round):
        if not self.predicate(trace.configs[-1]):
            self.start_round = None
            return False
        if new_round:
            if self.start_round is None:
                self.start_round = trace.completed_rounds
            return trace.completed_rounds - self.start_round >= self.window
        return False


def run(g: Graph, protocol: ProtocolSpec, scheduler: Scheduler, init: Sequence[State],
        stop: StopCondition, seed: int, on_step: Callable | None = None,
        check_signals: bool = False) -> Trace:
    """Execute until ``stop`` fires or its budget is exhausted.

    ``on_step(t, before, activated, after)`` is called after every step.  A
    trace that runs out of budget gets ``status='budget'`` (not an error).
    """
    if len(init) != g.n:
        raise ValueError(f"initial configuration has {len(init)} entries, graph has {g.n} nodes")
    universe = protocol.states
    for q in init:
        if q not in universe:
            raise ValueError(f"initial state {q!r} is not a state of {protocol.name}")
    stop.reset()
    trace = Trace(graph=g, protocol=protocol, scheduler=scheduler, seed=seed)
    config = tuple(init)
    trace.configs.append(config)
    stop.begin(trace)
    streams = NodeStreams(seed, g.n)
    schedule = scheduler.activations(g.n)
    pending = set(range(g.n))
    while True:
        if stop.exhausted(trace):
            trace.status = "budget"
            break
        act = next(schedule)
        draws: list = []
        nxt = step(config, g, protocol, act, streams, draws)
        if check_signals:
            for v in act:
                assert compute_signal(config, g, v) == frozenset(config[u] for u in g.closed_neighborhood(v))
        trace.activations.append(act)
        trace.draws.append(tuple(draws))
        trace.configs.append(nxt)
        pending.difference_update(act)
        new_round = not pending
        if new_round:
            trace.rounds.append(trace.steps)
            pending = set(range(g.n))
        if on_step is not None:
            on_step(trace.steps - 1, config, act, nxt)
        config = nxt
        if stop.done(trace, new_round):
            trace.status = "stopped"
            break
    return trace


def replay(trace: Trace, on_step: Callable | None = None) -> Trace:
    """Re-execute a trace's run from its seed, schedule and initial configuration."""
    return run(trace.graph, trace.protocol, trace.scheduler, trace.configs[0],
               MaxSteps(trace.steps), trace.seed, on_step=on_step)
