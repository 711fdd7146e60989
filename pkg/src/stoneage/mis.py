"""AlgMIS: synchronous self-stabilizing maximal independent set with ``O(D)`` states.

Three cooperating parts share one state:

* a phase clock (``flag``, ``step``) that keeps every node's phase aligned,
  with a random prefix of geometric length followed by ``D + 2`` counting
  rounds;
* two-round coin trials through which undecided candidates knock each other
  out, with survivors joining IN when ``step`` reaches ``D + 1`` and their
  undecided neighbours joining OUT one round later;
* local fault detection among decided nodes via random temporary ids.

Any detected fault hands the node to the restart chain.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

from .engine import IndexedList, ProtocolSpec
from .restart import is_sigma, wrap_with_restart

TOSS, OBSERVE = "t", "o"


class MisU(NamedTuple):
    tag: str
    flag: int
    step: int
    cand: int
    coin: int | None
    tphase: str


class MisIn(NamedTuple):
    tag: str
    flag: int
    step: int
    tid: int


class MisOut(NamedTuple):
    tag: str
    flag: int
    step: int


def U(flag, step, cand, coin, tphase) -> MisU:
    return MisU("U", flag, step, cand, coin, tphase)


def IN(flag, step, tid) -> MisIn:
    return MisIn("IN", flag, step, tid)


def OUT(flag, step) -> MisOut:
    return MisOut("OUT", flag, step)


@dataclass(frozen=True)
class MisParams:
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


def flag_outcomes(p0: Fraction) -> list[int]:
    """Equally likely next-flag values for a node holding ``flag = 1``."""
    return [0] * p0.numerator + [1] * (p0.denominator - p0.numerator)


def initial_state() -> MisU:
    return U(1, 0, 1, None, TOSS)


def mis_host_states(params: MisParams) -> list:
    steps = range(params.D + 3)
    out = []
    for f, s, c, coin, ph in itertools.product((0, 1), steps, (0, 1), (None, 0, 1), (TOSS, OBSERVE)):
        out.append(U(f, s, c, coin, ph))
    for f, s, i in itertools.product((0, 1), steps, range(1, params.k_id + 1)):
        out.append(IN(f, s, i))
    for f, s in itertools.product((0, 1), steps):
        out.append(OUT(f, s))
    return out


def mis_fault(q, signal: frozenset, params: MisParams) -> bool:
    """Local fault detector: broken step gradient, IN clash, or uncovered OUT."""
    if any(abs(x.step - q.step) > 1 for x in signal):
        return True
    if q.tag == "IN":
        return any(x.tag == "IN" and x.tid != q.tid for x in signal)
    if q.tag == "OUT":
        return not any(x.tag == "IN" for x in signal)
    return False


def phase_clock(q, signal: frozenset, params: MisParams) -> list[tuple[int, int, bool]]:
    """Equally likely ``(flag', step', new_phase)`` outcomes."""
    if q.flag == 1:
        return [(f, q.step, False) for f in flag_outcomes(params.p0)]
    smin = min(x.step for x in signal)
    if smin < params.D + 2:
        return [(0, smin + 1, False)]
    return [(1, 0, True)]


def mis_host_delta(q, signal: frozenset, params: MisParams) -> tuple:
    D = params.D
    ids = range(1, params.k_id + 1)
    out = []
    for flag, step, new_phase in phase_clock(q, signal, params):
        if new_phase:
            if q.tag == "U":
                out.append(initial_state())
            elif q.tag == "IN":
                out.extend(IN(1, 0, i) for i in ids)
            else:
                out.append(OUT(1, 0))
            continue
        if q.tag == "IN":
            out.extend(IN(flag, step, i) for i in ids)
            continue
        if q.tag == "OUT":
            out.append(OUT(flag, step))
            continue
        # undecided: one trial half while step <= D, then the join rules
        if q.step <= D:
            if q.tphase == TOSS:
                trial = [(q.cand, c, OBSERVE) for c in (0, 1)]
            else:
                ic = any(x.tag == "U" and x.cand == 1 and x.coin == 1 and x.tphase == OBSERVE
                         for x in signal)
                cand = 0 if (q.coin == 0 and ic) else q.cand
                trial = [(cand, None, TOSS)]
        else:
            trial = [(q.cand, None, TOSS)]
        for cand, coin, ph in trial:
            if step == D + 1 and q.step == D and cand == 1:
                out.extend(IN(flag, step, i) for i in ids)
            elif step == D + 2 and q.step == D + 1 and any(x.tag == "IN" for x in signal):
                out.append(OUT(flag, step))
            else:
                out.append(U(flag, step, cand, coin, ph))
    return tuple(out)


_U_RE = re.compile(r"^U\|f([01])\|s(\d+)\|c([01])([01_])([to])$")
_IN_RE = re.compile(r"^IN\|f([01])\|s(\d+)\|id(\d+)$")
_OUT_RE = re.compile(r"^OUT\|f([01])\|s(\d+)$")


def format_mis(q) -> str:
    if q.tag == "U":
        coin = "_" if q.coin is None else str(q.coin)
        return f"U|f{q.flag}|s{q.step}|c{q.cand}{coin}{q.tphase}"
    if q.tag == "IN":
        return f"IN|f{q.flag}|s{q.step}|id{q.tid}"
    return f"OUT|f{q.flag}|s{q.step}"


def parse_mis(s: str):
    s = s.strip()
    if m := _U_RE.match(s):
        coin = None if m.group(4) == "_" else int(m.group(4))
        return U(int(m.group(1)), int(m.group(2)), int(m.group(3)), coin, m.group(5))
    if m := _IN_RE.match(s):
        return IN(int(m.group(1)), int(m.group(2)), int(m.group(3)))
    if m := _OUT_RE.match(s):
        return OUT(int(m.group(1)), int(m.group(2)))
    raise ValueError(f"bad MIS state {s!r}")


def mis_output(q) -> int:
    return 1 if q.tag == "IN" else 0


def mis_protocol(params: MisParams | None = None, D: int | None = None) -> ProtocolSpec:
    if params is None:
        params = MisParams(D=D)
    host = ProtocolSpec(
        name="mis",
        states=IndexedList(mis_host_states(params)),
        delta=lambda q, s: mis_host_delta(q, s, params),
        is_output=lambda q: q.tag in ("IN", "OUT"),
        output_map=mis_output,
        initial_state=initial_state(),
        format_state=format_mis,
        parse_state=parse_mis,
        params=params.to_dict(),
    )
    return wrap_with_restart(host, lambda q, s: mis_fault(q, s, params), params.D)


def is_host(q) -> bool:
    return not is_sigma(q)
