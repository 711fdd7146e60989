"""Restart: a chain of ``2D + 1`` states that releases every node at once.

A node that detects a fault enters ``sigma(0)``.  The wave spreads to every
host-state neighbour, the chain indices then align, and all nodes leave
``sigma(2D)`` together into the host's initial state ``q*_0``.
"""
from __future__ import annotations

from typing import Callable, NamedTuple

from .engine import IndexedList, ProtocolSpec


class Sigma(NamedTuple):
    tag: str
    i: int

    def __str__(self) -> str:
        return f"R{self.i}"


def sigma(i: int) -> Sigma:
    return Sigma("R", i)


def is_sigma(q) -> bool:
    return isinstance(q, Sigma)


def sigma_states(D: int) -> list[Sigma]:
    return [sigma(i) for i in range(2 * D + 1)]


def restart_transition(own, sensed: frozenset, D: int, q0):
    """Next state of a node that is in a restart state, or senses one.

    Mixed neighbourhoods send everyone to ``sigma(0)``; a pure restart
    neighbourhood advances to one past its smallest index; a neighbourhood
    entirely at the exit state leaves to ``q0``.
    """
    has_sigma = any(is_sigma(q) for q in sensed)
    has_host = any(not is_sigma(q) for q in sensed)
    if has_sigma and has_host:
        return sigma(0)
    if not has_sigma:
        return own
    top = 2 * D
    if sensed == {sigma(top)}:
        return q0
    return sigma(min(q.i for q in sensed) + 1)


def wrap_with_restart(host: ProtocolSpec, fault: Callable[[object, frozenset], bool],
                      D: int) -> ProtocolSpec:
    """Host protocol plus restart chain; ``fault(q, signal)`` is the local detector."""
    if host.initial_state is None:
        raise ValueError(f"{host.name} has no initial state to restart into")
    sig = sigma_states(D)
    clash = [q for q in host.states if is_sigma(q) or str(q) in {str(s) for s in sig}]
    if clash:
        raise ValueError(f"{host.name} state names collide with restart states: {clash[:3]}")
    q0 = host.initial_state

    def delta(q, signal: frozenset) -> tuple:
        if is_sigma(q) or any(is_sigma(x) for x in signal):
            return (restart_transition(q, signal, D, q0),)
        if fault(q, signal):
            return (sigma(0),)
        return host.delta(q, signal)

    def fmt(q) -> str:
        return str(q) if is_sigma(q) else host.format_state(q)

    def parse(s: str):
        s = s.strip()
        if s.startswith("R") and s[1:].isdigit():
            return sigma(int(s[1:]))
        if host.parse_state is None:
            raise ValueError(f"cannot parse {s!r}")
        return host.parse_state(s)

    return ProtocolSpec(
        name=host.name,
        states=IndexedList(list(host.states) + sig),
        delta=delta,
        is_output=lambda q: not is_sigma(q) and host.is_output(q),
        output_map=host.output_map,
        initial_state=q0,
        format_state=fmt,
        parse_state=parse,
        params=dict(host.params),
    )


def all_exit_step(configs, D: int, q0) -> int | None:
    """First step ``t`` with every node at ``sigma(2D)`` at ``t`` and at ``q0`` at ``t+1``."""
    top = sigma(2 * D)
    for t in range(len(configs) - 1):
        if all(q == top for q in configs[t]) and all(q == q0 for q in configs[t + 1]):
            return t
    return None
