"""Run a synchronous protocol under any fair schedule by riding on AlgAU.

Each node holds ``(q, q_prev, clock)``.  The clock runs AlgAU on every
activation.  Only when it makes an able-to-able advance ``nu -> nu'`` does
the node take one step of the hosted protocol.  That step reads a simulated
signal in which same-clock neighbours contribute their current state and
already advanced neighbours contribute their previous one.
"""
from __future__ import annotations

from .engine import ProductStates, ProtocolSpec
from . import unison


def simulated_signal(sensed: frozenset, nu, nu_next) -> frozenset:
    return frozenset([s[0] for s in sensed if s[2] == nu] + [s[1] for s in sensed if s[2] == nu_next])


def synchronize(pi: ProtocolSpec, D: int, cache_limit: int = 300_000) -> ProtocolSpec:
    k = unison.k_of(D)
    clock_states = unison.au_protocol(D).states

    def delta(state, signal: frozenset) -> tuple:
        q, q_prev, nu = state
        nu_next = unison.au_transition(nu, frozenset(s[2] for s in signal), k)
        if not nu.faulty and not nu_next.faulty and nu_next != nu:
            sim = simulated_signal(signal, nu, nu_next)
            return tuple((p, q, nu_next) for p in pi.candidates(q, sim))
        return ((q, q_prev, nu_next),)

    def fmt(state) -> str:
        q, q_prev, nu = state
        return f"({pi.format_state(q)};{pi.format_state(q_prev)};{unison.format_turn(nu)})"

    def parse(s: str):
        s = s.strip()
        if not (s.startswith("(") and s.endswith(")")):
            raise ValueError(f"bad product state {s!r}")
        parts = s[1:-1].split(";")
        if len(parts) != 3 or pi.parse_state is None:
            raise ValueError(f"bad product state {s!r}")
        return (pi.parse_state(parts[0]), pi.parse_state(parts[1]), unison.parse_turn(parts[2]))

    q0 = pi.initial_state
    return ProtocolSpec(
        name=f"sync-{pi.name}",
        states=ProductStates(pi.states, pi.states, clock_states),
        delta=delta,
        is_output=lambda s: pi.is_output(s[0]) and not s[2].faulty,
        output_map=lambda s: pi.output_map(s[0]),
        initial_state=None if q0 is None else (q0, q0, unison.able(1)),
        format_state=fmt,
        parse_state=parse,
        params={**pi.params, "synchronized": True, "k": k},
        cache_limit=cache_limit,
    )


def pi_projection(config) -> tuple:
    return tuple(s[0] for s in config)


def clock_projection(config) -> tuple:
    return tuple(s[2] for s in config)
