"""Graph model, bounded-diameter generators and edge-list ingestion.

Nodes are dense integers ``0..n-1``.  The ids exist for the harness only;
protocol transitions never see them.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graph specs, disconnected inputs or failed sampling."""


class EdgeListParseError(GraphError):
    def __init__(self, path: str, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class Graph:
    n: int
    adjacency: tuple[tuple[int, ...], ...]
    dist: np.ndarray = field(repr=False, compare=False)
    diameter: int = 0
    name: str = ""

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], name: str = "") -> "Graph":
        if n < 1:
            raise GraphError("graph needs at least one node")
        nbrs: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) out of range for n={n}")
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            nbrs[u].add(v)
            nbrs[v].add(u)
        adjacency = tuple(tuple(sorted(s)) for s in nbrs)
        dist = bfs_distances(adjacency)
        if (dist < 0).any():
            raise GraphError("graph is not connected")
        dist.setflags(write=False)
        return cls(n=n, adjacency=adjacency, dist=dist, diameter=int(dist.max()), name=name)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.n) for v in self.adjacency[u] if u < v]

    def closed_neighborhood(self, v: int) -> tuple[int, ...]:
        return (v,) + self.adjacency[v]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def ball(self, v: int, radius: int) -> list[int]:
        return [u for u in range(self.n) if self.dist[v, u] <= radius]

    def to_dict(self) -> dict:
        return {"name": self.name, "n": self.n, "edges": [list(e) for e in self.edges],
                "diameter": self.diameter}


def bfs_distances(adjacency: Sequence[Sequence[int]]) -> np.ndarray:
    """All-pairs hop distances; unreachable pairs are ``-1``."""
    n = len(adjacency)
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        row = dist[s]
        row[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for w in adjacency[u]:
                if row[w] < 0:
                    row[w] = row[u] + 1
                    queue.append(w)
    return dist


def distances(g: Graph) -> np.ndarray:
    return g.dist


# ---------------------------------------------------------------- generators

@dataclass(frozen=True)
class GraphSpec:
    """Declarative description of a graph to build.

    ``kind`` is one of ``complete``, ``path``, ``cycle``, ``wheel``,
    ``random`` (bounded diameter) or ``file`` (edge list).  For ``wheel``, ``n``
    counts the hub plus the rim.
    """

    kind: str
    n: int = 1
    D: int | None = None
    seed: int = 0
    p: float = 0.3
    path: str | None = None
    max_retries: int = 100

    @classmethod
    def from_dict(cls, d: dict) -> "GraphSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise GraphError(f"unknown graph spec fields: {sorted(extra)}")
        return cls(**d)


def complete_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(u, v) for u in range(n) for v in range(u + 1, n)], name=f"K{n}")


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)], name=f"P{n}")


def cycle_graph(n: int) -> Graph:
    if n < 3:
        raise GraphError("cycle needs n >= 3")
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], name=f"C{n}")


def wheel_graph(rim: int) -> Graph:
    """Hub 0 joined to every node of the rim cycle ``1..rim``."""
    if rim < 3:
        raise GraphError("wheel rim needs at least 3 nodes")
    edges = [(0, i) for i in range(1, rim + 1)]
    edges += [(i, i % rim + 1) for i in range(1, rim + 1)]
    return Graph.from_edges(rim + 1, edges, name=f"W{rim}")


def random_bounded_diameter(n: int, D: int, seed: int, p: float = 0.3,
                            max_retries: int = 100) -> Graph:
    """Random connected graph whose diameter is at most ``D``.

    A random rooted spanning tree of depth ``<= ceil(D/2)`` is grown by
    attaching nodes to uniformly chosen shallow parents, then every non-tree
    pair is added with probability ``p``.  Samples whose diameter exceeds ``D``
    are discarded.
    """
    if n < 1 or D < 1:
        raise GraphError("random graph needs n >= 1 and D >= 1")
    if not 0.0 <= p <= 1.0:
        raise GraphError(f"edge probability {p} outside [0, 1]")
    rng = random.Random(seed)
    depth_cap = max(1, (D + 1) // 2)
    for _ in range(max_retries):
        order = list(range(n))
        rng.shuffle(order)
        depth = {order[0]: 0}
        shallow = [order[0]]
        edges = set()
        for v in order[1:]:
            parent = rng.choice(shallow)
            depth[v] = depth[parent] + 1
            edges.add((min(v, parent), max(v, parent)))
            if depth[v] < depth_cap:
                shallow.append(v)
        for u in range(n):
            for v in range(u + 1, n):
                if (u, v) not in edges and rng.random() < p:
                    edges.add((u, v))
        g = Graph.from_edges(n, sorted(edges), name=f"rand(n={n},D={D},seed={seed})")
        if g.diameter <= D:
            return g
    raise GraphError(f"generation failed after {max_retries} retries (n={n}, D={D}, p={p})")


def load_edge_list(path: str | Path) -> Graph:
    """Parse ``u v`` lines (0-based ids, ``#`` comments).

    The node count is one more than the largest id seen.  Duplicate edges and
    self-loops are rejected with the offending line number.
    """
    path = str(path)
    edges: list[tuple[int, int]] = []
    seen: dict[tuple[int, int], int] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise EdgeListParseError(path, lineno, f"expected 'u v', got {raw.strip()!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise EdgeListParseError(path, lineno, f"non-integer node id in {raw.strip()!r}") from None
            if u < 0 or v < 0:
                raise EdgeListParseError(path, lineno, "negative node id")
            if u == v:
                raise EdgeListParseError(path, lineno, f"self-loop at node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise EdgeListParseError(path, lineno, f"duplicate edge {key} (first on line {seen[key]})")
            seen[key] = lineno
            edges.append(key)
    if not edges:
        n = 1
    else:
        n = 1 + max(max(e) for e in edges)
    return Graph.from_edges(n, edges, name=Path(path).stem)


def write_edge_list(g: Graph, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {g.name} n={g.n} diameter={g.diameter}\n")
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")


def build_graph(spec: GraphSpec) -> Graph:
    kind = spec.kind
    if kind == "complete":
        g = complete_graph(spec.n)
    elif kind == "path":
        g = path_graph(spec.n)
    elif kind == "cycle":
        g = cycle_graph(spec.n)
    elif kind == "wheel":
        g = wheel_graph(spec.n - 1)
    elif kind == "random":
        if spec.D is None:
            raise GraphError("random graph spec needs a diameter bound D")
        return random_bounded_diameter(spec.n, spec.D, spec.seed, spec.p, spec.max_retries)
    elif kind == "file":
        if not spec.path:
            raise GraphError("file graph spec needs a path")
        g = load_edge_list(spec.path)
    else:
        raise GraphError(f"unknown graph kind {kind!r}")
    if spec.D is not None and g.diameter > spec.D:
        raise GraphError(f"{g.name} has diameter {g.diameter} > declared bound {spec.D}")
    return g
