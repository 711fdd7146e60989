"""A reset-based unison protocol that live-locks, and the instance that shows it.

Main turns ``0..cD`` advance cyclically; a node that senses anything outside
its own turn and the two neighbouring turns drops to reset turn ``X0``, and
reset turns climb to ``X{cD}`` before re-entering main turn ``0``.  On a
7-spoke wheel a fair schedule rotates the configuration forever.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import NamedTuple

from .engine import IndexedList, MaxSteps, ProtocolSpec, Scheduler, run
from .topology import Graph, wheel_graph
from . import unison


class Main(NamedTuple):
    tag: str
    level: int

    def __str__(self):
        return str(self.level)


class Reset(NamedTuple):
    tag: str
    i: int

    def __str__(self):
        return f"X{self.i}"


def main(level: int) -> Main:
    return Main("M", level)


def reset(i: int) -> Reset:
    return Reset("X", i)


def failed_states(c: int, D: int) -> list:
    top = c * D
    return [main(l) for l in range(top + 1)] + [reset(i) for i in range(top + 1)]


def classify(before, after) -> str:
    if before == after:
        return "--"
    if before.tag == "M" and after.tag == "M":
        return "ST1"
    if before.tag == "M":
        return "ST2"
    return "ST3"


def failed_transition(own, sensed: frozenset, c: int, D: int):
    """Reset turns never count as levels, so any sensed reset turn blocks ST1
    and triggers ST2, except ``X{cD}`` sensed from main turn 0."""
    top = c * D
    m = top + 1
    if own.tag == "M":
        l = own.level
        nxt, prv = main((l + 1) % m), main((l - 1) % m)
        if sensed <= {own, nxt}:
            return nxt
        allowed = {own, nxt, prv}
        if l == 0:
            allowed.add(reset(top))
        if not sensed <= allowed:
            return reset(0)
        return own
    i = own.i
    if i != top:
        if all(x.tag == "X" and x.i >= i for x in sensed):
            return reset(i + 1)
        return own
    if sensed <= {reset(top), main(0)}:
        return main(0)
    return own


def format_failed(q) -> str:
    return str(q)


def parse_failed(s: str):
    s = s.strip()
    if re.fullmatch(r"X\d+", s):
        return reset(int(s[1:]))
    if re.fullmatch(r"\d+", s):
        return main(int(s))
    raise ValueError(f"bad turn {s!r}")


def failed_protocol(c: int = 2, D: int = 2) -> ProtocolSpec:
    return ProtocolSpec(
        name="failed-au",
        states=IndexedList(failed_states(c, D)),
        delta=lambda q, s: (failed_transition(q, s, c, D),),
        is_output=lambda q: q.tag == "M",
        output_map=lambda q: q.level,
        initial_state=main(0),
        format_state=format_failed,
        parse_state=parse_failed,
        params={"c": c, "D": D},
    )


LIVELOCK_C, LIVELOCK_D = 2, 2
RIM = 7


def build_livelock_instance() -> tuple[Graph, tuple]:
    """Hub ``v0`` plus a 7-cycle rim, with the configuration that rotates."""
    g = wheel_graph(RIM)
    top = LIVELOCK_C * LIVELOCK_D
    config = (reset(top), main(0), main(0), reset(0), reset(1), reset(2), reset(3), reset(4))
    assert config[0] == reset(top)
    return g, config


def expected_after_pass() -> tuple:
    return (reset(4), main(0), reset(0), reset(1), reset(2), reset(3), reset(4), main(0))


def rotate_rim(config: tuple, shift: int = 1) -> tuple:
    """``new[v_i] = old[v_{i+shift}]`` on the rim, hub fixed."""
    rim = config[1:]
    return (config[0],) + tuple(rim[(i + shift) % RIM] for i in range(RIM))


def livelock_schedule(passes: int = RIM) -> tuple:
    """Hub, then the rim starting at the node currently playing ``v1``'s role."""
    script = []
    for p in range(passes):
        script.append((0,))
        for j in range(RIM):
            script.append((1 + (j - p) % RIM,))
    return tuple(script)


EXPECTED_KINDS = ("--", "--", "ST2", "ST3", "ST3", "ST3", "ST3", "ST3")


@dataclass
class LivelockVerdict:
    ok: bool
    steps: list = field(default_factory=list)   # (t, node, before, after, kind)
    failures: list = field(default_factory=list)
    after_pass: tuple = ()
    after_orbit: tuple = ()

    def table(self) -> str:
        lines = ["step node before after kind"]
        for t, v, b, a, kind in self.steps:
            lines.append(f"{t:>4} v{v:<3} {str(b):>6} {str(a):>5} {kind}")
        lines.append("verdict: " + ("PASS" if self.ok else "FAIL"))
        lines += [f"  {f}" for f in self.failures]
        return "\n".join(lines)


def run_livelock_check() -> LivelockVerdict:
    g, init = build_livelock_instance()
    proto = failed_protocol(LIVELOCK_C, LIVELOCK_D)
    sched = Scheduler(kind="scripted", script=livelock_schedule(RIM))
    trace = run(g, proto, sched, init, MaxSteps(8 * RIM), seed=0)
    verdict = LivelockVerdict(ok=True)
    for t in range(8):
        (v,) = trace.activations[t]
        b, a = trace.configs[t][v], trace.configs[t + 1][v]
        kind = classify(b, a)
        verdict.steps.append((t + 1, v, b, a, kind))
        if kind != EXPECTED_KINDS[v]:
            verdict.failures.append(f"step {t + 1}: v{v} did {kind}, expected {EXPECTED_KINDS[v]}")
    verdict.after_pass = trace.configs[8]
    if trace.configs[8] != expected_after_pass():
        verdict.failures.append("configuration after 8 steps differs from the rotated picture")
    if trace.configs[8] != rotate_rim(init):
        verdict.failures.append("configuration after 8 steps is not a rim rotation of the start")
    for p in range(1, RIM + 1):
        if trace.configs[8 * p] != rotate_rim(init, p):
            verdict.failures.append(f"pass {p} did not rotate the rim")
    verdict.after_orbit = trace.configs[8 * RIM]
    if trace.configs[8 * RIM] != init:
        verdict.failures.append(f"{8 * RIM} steps did not return the initial configuration")
    for t, cfg in enumerate(trace.configs):
        if all(q.tag == "M" for q in cfg) and _main_good(g, cfg, LIVELOCK_C * LIVELOCK_D):
            verdict.failures.append(f"time {t} is a settled main-turn configuration")
            break
    verdict.ok = not verdict.failures
    return verdict


def _main_good(g: Graph, cfg, top: int) -> bool:
    m = top + 1
    return all(min((cfg[u].level - cfg[v].level) % m, (cfg[v].level - cfg[u].level) % m) <= 1
               for u, v in g.edges)


def au_analogue(config: tuple) -> tuple:
    """Same picture for AlgAU with ``D = 2``: main ``l -> A(l+1)``, ``X_i -> F(-(i+2))``."""
    out = []
    for q in config:
        if q.tag == "M":
            out.append(unison.able(q.level + 1))
        else:
            out.append(unison.faulty(-(q.i + 2)))
    return tuple(out)
