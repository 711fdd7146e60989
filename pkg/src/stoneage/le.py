"""AlgLE: synchronous self-stabilizing leader election with ``O(D)`` states.

Time is cut into epochs of ``D`` rounds.  In the compute stage every epoch
floods two bits across the graph: whether any flag is still up (a
geometric-length counter) and whether any surviving candidate tossed heads.
Once no flag is up the survivors become leaders and the verify stage starts,
where each leader floods a fresh random id every epoch and any node that
sees two ids, or none, restarts the algorithm.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

from .engine import IndexedList, ProtocolSpec
from .mis import flag_outcomes
from .restart import wrap_with_restart


class LeC(NamedTuple):
    tag: str
    rnd: int
    flag: int
    cand: int
    coin: int | None
    fw: int
    cw: int


class LeV(NamedTuple):
    tag: str
    rnd: int
    leader: int
    seen: int | None


def C(rnd, flag, cand, coin, fw, cw) -> LeC:
    return LeC("C", rnd, flag, cand, coin, fw, cw)


def V(rnd, leader, seen) -> LeV:
    return LeV("V", rnd, leader, seen)


@dataclass(frozen=True)
class LeParams:
    D: int
    p0: Fraction = Fraction(1, 4)
    k_id: int = 4

    def __post_init__(self):
        object.__setattr__(self, "p0", Fraction(self.p0).limit_denominator(1000))
        if self.D < 1:
            raise ValueError("D must be >= 1")
        if not 0 < self.p0 <= Fraction(1, 2):
            raise ValueError(f"p0 must lie in (0, 1/2], got {self.p0}")
        if self.k_id < 2:
            raise ValueError("k_id must be >= 2")

    def to_dict(self) -> dict:
        return {"D": self.D, "p0": str(self.p0), "k_id": self.k_id}


def initial_state() -> LeC:
    # warm-up epoch: nothing tossed yet, the raised flag keeps the stage alive
    return C(0, 1, 1, None, 1, 0)


def le_host_states(params: LeParams) -> list:
    rnds = range(params.D)
    out = [C(*x) for x in itertools.product(rnds, (0, 1), (0, 1), (None, 0, 1), (0, 1), (0, 1))]
    out += [V(r, l, s) for r, l, s in itertools.product(rnds, (0, 1), [None, *range(1, params.k_id + 1)])]
    return out


def _sensed_ids(signal: frozenset) -> set:
    return {x.seen for x in signal if x.seen is not None}


def le_fault(q, signal: frozenset, params: LeParams) -> bool:
    """Round-number or stage disagreement, conflicting ids, or an epoch with no id."""
    if any(x.rnd != q.rnd or x.tag != q.tag for x in signal):
        return True
    if q.tag == "V":
        ids = _sensed_ids(signal)
        if len(ids) > 1:
            return True
        if q.rnd == params.D - 1 and not ids:
            return True
    return False


def le_host_delta(q, signal: frozenset, params: LeParams) -> tuple:
    D = params.D
    wrap = q.rnd == D - 1
    nxt = 0 if wrap else q.rnd + 1
    ids = range(1, params.k_id + 1)
    if q.tag == "V":
        if not wrap:
            seen = q.seen
            if seen is None:
                found = _sensed_ids(signal)
                seen = min(found) if found else None
            return (V(nxt, q.leader, seen),)
        if q.leader:
            return tuple(V(0, 1, i) for i in ids)
        return (V(0, 0, None),)

    fw = int(q.fw or any(x.fw for x in signal))
    cw = int(q.cw or any(x.cw for x in signal))
    if not wrap:
        return (C(nxt, q.flag, q.cand, q.coin, fw, cw),)
    cand = 0 if (q.cand and q.coin == 0 and cw) else q.cand
    if not fw:
        if cand:
            return tuple(V(0, 1, i) for i in ids)
        return (V(0, 0, None),)
    flags = flag_outcomes(params.p0) if q.flag else [0]
    coins = (0, 1) if cand else (None,)
    return tuple(C(0, f, cand, c, f, int(bool(cand and c))) for f, c in itertools.product(flags, coins))


_C_RE = re.compile(r"^C\|r(\d+)\|f([01])\|c([01])([01_])\|w([01])([01])$")
_V_RE = re.compile(r"^V\|r(\d+)\|L([01])\|seen(\d+|_)$")


def format_le(q) -> str:
    if q.tag == "C":
        coin = "_" if q.coin is None else str(q.coin)
        return f"C|r{q.rnd}|f{q.flag}|c{q.cand}{coin}|w{q.fw}{q.cw}"
    seen = "_" if q.seen is None else str(q.seen)
    return f"V|r{q.rnd}|L{q.leader}|seen{seen}"


def parse_le(s: str):
    s = s.strip()
    if m := _C_RE.match(s):
        coin = None if m.group(4) == "_" else int(m.group(4))
        return C(int(m.group(1)), int(m.group(2)), int(m.group(3)), coin, int(m.group(5)), int(m.group(6)))
    if m := _V_RE.match(s):
        seen = None if m.group(3) == "_" else int(m.group(3))
        return V(int(m.group(1)), int(m.group(2)), seen)
    raise ValueError(f"bad LE state {s!r}")


def le_protocol(params: LeParams | None = None, D: int | None = None) -> ProtocolSpec:
    if params is None:
        params = LeParams(D=D)
    host = ProtocolSpec(
        name="le",
        states=IndexedList(le_host_states(params)),
        delta=lambda q, s: le_host_delta(q, s, params),
        is_output=lambda q: q.tag == "V",
        output_map=lambda q: q.leader,
        initial_state=initial_state(),
        format_state=format_le,
        parse_state=parse_le,
        params=params.to_dict(),
    )
    return wrap_with_restart(host, lambda q, s: le_fault(q, s, params), params.D)
