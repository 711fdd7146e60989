"""AlgAU: deterministic self-stabilizing asynchronous unison with ``O(D)`` states.

Levels are the signed integers ``1 <= |l| <= k`` with ``k = 3D + 2``.  In
forward order they form one cycle ``-k, ..., -1, 1, ..., k`` of length ``2k``,
which is the clock.  A turn is *able* (an output state whose clock value is its
level) or *faulty* (a recovery detour, ``|l| >= 2``).
"""
from __future__ import annotations

import re
from collections import deque
from functools import lru_cache
from typing import NamedTuple, Sequence

from .engine import IndexedList, ProtocolSpec
from .topology import Graph


class LevelError(ValueError):
    """Level or operator argument outside its domain."""


class MutualExclusionError(AssertionError):
    """Both the AA and the AF rule fired for the same node: an encoding bug."""


class Turn(NamedTuple):
    faulty: bool
    level: int

    def __str__(self) -> str:
        return format_turn(self)


def able(level: int) -> Turn:
    return Turn(False, level)


def faulty(level: int) -> Turn:
    return Turn(True, level)


def k_of(D: int) -> int:
    if D < 1:
        raise LevelError(f"diameter bound must be >= 1, got {D}")
    return 3 * D + 2


def check_level(level: int, k: int) -> None:
    if not (isinstance(level, int) and 1 <= abs(level) <= k):
        raise LevelError(f"{level!r} is not a level for k={k}")


def levels(k: int) -> list[int]:
    """All ``2k`` levels in forward (clock) order starting at ``-k``."""
    return list(range(-k, 0)) + list(range(1, k + 1))


def position(level: int, k: int) -> int:
    """Index of ``level`` on the forward cycle, ``-k -> 0`` up to ``k -> 2k-1``."""
    return level + k if level < 0 else level + k - 1


def level_at(pos: int, k: int) -> int:
    pos %= 2 * k
    return pos - k if pos < k else pos - k + 1


def forward(level: int, k: int) -> int:
    """``phi``: ``-1 -> 1``, ``k -> -k``, otherwise ``l + 1``."""
    check_level(level, k)
    if level == -1:
        return 1
    if level == k:
        return -k
    return level + 1


def forward_iter(level: int, j: int, k: int) -> int:
    """``phi^j``; negative ``j`` applies the inverse."""
    check_level(level, k)
    return level_at(position(level, k) + j, k)


def outwards(level: int, j: int, k: int) -> int:
    """``psi^j``: same sign, magnitude ``|l| + j``; defined for ``-|l| < j <= k - |l|``."""
    check_level(level, k)
    m = abs(level)
    if not -m < j <= k - m:
        raise LevelError(f"psi^{j}({level}) undefined for k={k}")
    return (m + j) if level > 0 else -(m + j)


@lru_cache(maxsize=4096)
def psi_sets(level: int, k: int) -> dict[str, frozenset[int]]:
    """The six outward/inward level sets keyed ``> >= >> < <= <<``."""
    check_level(level, k)
    m = abs(level)
    gt = frozenset(outwards(level, j, k) for j in range(1, k - m + 1))
    lt = frozenset(outwards(level, j, k) for j in range(-m + 1, 0))
    return {
        ">": gt,
        ">=": gt | {level},
        ">>": gt - ({outwards(level, 1, k)} if m < k else set()),
        "<": lt,
        "<=": lt | {level},
        "<<": lt - ({outwards(level, -1, k)} if m > 1 else set()),
    }


def level_distance(a: int, b: int, k: int) -> int:
    """Hop distance between two levels on the ``2k``-cycle."""
    check_level(a, k)
    check_level(b, k)
    d = abs(position(a, k) - position(b, k))
    return min(d, 2 * k - d)


def adjacent(a: int, b: int, k: int) -> bool:
    return level_distance(a, b, k) <= 1


# ------------------------------------------------------------ serialization

_TURN_RE = re.compile(r"^([AF])([+-])(\d+)$")


def format_turn(t: Turn) -> str:
    return f"{'F' if t.faulty else 'A'}{'+' if t.level > 0 else '-'}{abs(t.level)}"


def parse_turn(s: str) -> Turn:
    m = _TURN_RE.match(s.strip())
    if not m:
        raise ValueError(f"bad turn {s!r}; expected e.g. A+3 or F-7")
    lvl = int(m.group(3)) * (1 if m.group(2) == "+" else -1)
    return Turn(m.group(1) == "F", lvl)


def turns(k: int) -> list[Turn]:
    """Canonical state order: able turns in clock order, then faulty ones."""
    return [able(l) for l in levels(k)] + [faulty(l) for l in levels(k) if abs(l) >= 2]


# ------------------------------------------------------------ local predicates

class LocalView(NamedTuple):
    protected: bool
    good: bool
    out_protected: bool
    justifiably_faulty: bool
    unjustifiably_faulty: bool


@lru_cache(maxsize=1 << 18)
def local_view(own: Turn, sensed: frozenset, k: int) -> LocalView:
    """Node predicates that depend only on the node's turn and its signal.

    Each sensed turn in ``N+(v)`` is present in ``sensed`` (own included), and
    edge protection is symmetric, so a node is protected iff every sensed
    level is adjacent to its own.
    """
    lvl = own.level
    lam = {t.level for t in sensed}
    protected = all(adjacent(lvl, x, k) for x in lam)
    any_faulty = any(t.faulty for t in sensed)
    sets = psi_sets(lvl, k)
    out_protected = not (lam & sets[">>"])
    just = False
    if own.faulty:
        just = (not protected) or (abs(lvl) >= 2 and faulty(outwards(lvl, -1, k)) in sensed)
    return LocalView(protected, protected and not any_faulty, out_protected,
                     just, own.faulty and not just)


def au_transition(own: Turn, sensed: frozenset, k: int, require_good: bool = True) -> Turn:
    """One AlgAU activation.  ``require_good=False`` is the guard-less mutant."""
    lvl = own.level
    lam = {t.level for t in sensed}
    if own.faulty:
        if lam & psi_sets(lvl, k)[">"]:
            return own
        return able(outwards(lvl, -1, k))
    view = local_view(own, sensed, k)
    nxt = forward(lvl, k)
    aa = (view.good or not require_good) and lam <= {lvl, nxt}
    af = abs(lvl) >= 2 and (not view.protected or faulty(outwards(lvl, -1, k)) in sensed)
    if aa and af:
        if require_good:
            raise MutualExclusionError(f"AA and AF both enabled at {format_turn(own)}")
        return able(nxt)
    if aa:
        return able(nxt)
    if af:
        return faulty(lvl)
    return own


def transition_kind(before: Turn, after: Turn) -> str:
    """``AA``, ``AF``, ``FA`` or ``--`` for no change."""
    if before == after:
        return "--"
    return ("F" if before.faulty else "A") + ("F" if after.faulty else "A")


def au_protocol(D: int, require_good: bool = True) -> ProtocolSpec:
    k = k_of(D)

    def delta(state: Turn, signal: frozenset) -> tuple:
        return (au_transition(state, signal, k, require_good),)

    name = "au" if require_good else "au-mutant"
    return ProtocolSpec(
        name=name,
        states=IndexedList(turns(k)),
        delta=delta,
        is_output=lambda t: not t.faulty,
        output_map=lambda t: t.level,
        initial_state=able(1),
        format_state=format_turn,
        parse_state=parse_turn,
        params={"D": D, "k": k, "require_good": require_good},
    )


# --------------------------------------------------------- configuration level

def sensed(config: Sequence[Turn], g: Graph, v: int) -> frozenset:
    return frozenset([config[v]] + [config[u] for u in g.adjacency[v]])


def node_predicates(config: Sequence[Turn], g: Graph, v: int, D: int) -> dict:
    """All per-node predicates, with a grounded witness path (or ``None``)."""
    k = k_of(D)
    view = local_view(config[v], sensed(config, g, v), k)
    return {
        "protected": view.protected,
        "out_protected": view.out_protected,
        "good": view.good,
        "justifiably_faulty": view.justifiably_faulty,
        "grounded_witness": grounded_witness(config, g, v, D),
    }


def protected_nodes(config: Sequence[Turn], g: Graph, k: int) -> list[bool]:
    return [local_view(config[v], sensed(config, g, v), k).protected for v in range(g.n)]


def grounded_witness(config: Sequence[Turn], g: Graph, v: int, D: int) -> list[int] | None:
    """Shortest path of protected nodes from ``v`` to a level-``+-1`` node, length ``<= D``."""
    k = k_of(D)
    prot = protected_nodes(config, g, k)
    if not prot[v]:
        return None
    parent = {v: None}
    frontier = deque([(v, 0)])
    while frontier:
        u, d = frontier.popleft()
        if abs(config[u].level) == 1:
            path = [u]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        if d == D:
            continue
        for w in g.adjacency[u]:
            if w not in parent and prot[w]:
                parent[w] = u
                frontier.append((w, d + 1))
    return None


def is_good(config: Sequence[Turn], g: Graph, k: int) -> bool:
    return all(local_view(config[v], sensed(config, g, v), k).good for v in range(g.n))


def level_span(levels_present: set[int], k: int) -> int:
    """Length of the shortest forward arc covering all given levels."""
    pos = sorted(position(l, k) for l in levels_present)
    if len(pos) <= 1:
        return 0
    gaps = [pos[i + 1] - pos[i] for i in range(len(pos) - 1)] + [pos[0] + 2 * k - pos[-1]]
    return 2 * k - max(gaps)
