"""Run regimes shared by the acceptance suite and the constant-fitting script."""
from __future__ import annotations

import math

import numpy as np

from stoneage import unison
from stoneage.engine import MaxSteps, Scheduler, run
from stoneage.experiments import au_run, static_run
from stoneage.le import V, LeParams, le_protocol
from stoneage.mis import MisParams, mis_protocol
from stoneage.restart import is_sigma
from stoneage.synchronizer import synchronize
from stoneage.topology import random_bounded_diameter
from stoneage.verification import mis_phases, z_oracle

AU_D = (1, 2, 3)
AU_GRAPHS = 30
AU_INITS = 10
SCHEDULERS = ("synchronous", "round-robin", "random-fair")
STATIC_N = (8, 16, 32)
STATIC_D = (2, 3)
STATIC_SEEDS = 50
UNCAPPED = 100_000


def au_graph(D: int, j: int):
    n = 2 + j % 11
    return random_bounded_diameter(n, D, seed=1000 * D + j, p=1.0 if D == 1 else 0.3)


def scheduler(kind: str, seed: int) -> Scheduler:
    return Scheduler(kind, seed=seed, B=3 if kind == "random-fair" else 1)


def au_runs(D: int, budget_rounds: int = UNCAPPED, require_good: bool = True):
    """Every AlgAU run of the stabilization regime for one ``D``."""
    k = unison.k_of(D)
    turns = unison.turns(k)
    for j in range(AU_GRAPHS):
        g = au_graph(D, j)
        for i in range(AU_INITS):
            rng = np.random.default_rng([D, j, i])
            init = tuple(turns[int(x)] for x in rng.integers(len(turns), size=g.n))
            for kind in SCHEDULERS:
                seed = 10_000 * D + 100 * j + i
                rec = au_run(g, D, scheduler(kind, seed), init, seed, budget_rounds,
                             window=4 * 2 * k, liveness=(1, 3), require_good=require_good)
                rec.update(D=D, graph=j, init=i, scheduler=kind, n=g.n)
                yield rec


def log2(n: int) -> float:
    return math.log2(n)


def mis_shape(n: int, D: int) -> float:
    return (D + log2(n)) * log2(n)


def le_shape(n: int, D: int) -> float:
    return D * log2(n)


def static_graph(n: int, D: int, seed: int):
    return random_bounded_diameter(n, D, seed=7919 * n + 31 * D + seed)


def static_init(proto, n: int, seed: int, policy: str):
    if policy == "q0":
        return (proto.initial_state,) * n
    rng = np.random.default_rng([seed, n, 0xAD])
    return tuple(proto.sample_state(rng) for _ in range(n))


def static_runs(task: str, ns=STATIC_N, Ds=STATIC_D, seeds=STATIC_SEEDS, budget=None, with_z=False):
    """AlgMIS / AlgLE runs under the synchronous schedule, from ``q*_0`` and random states."""
    for n in ns:
        for D in Ds:
            proto = mis_protocol(MisParams(D=D)) if task == "MIS" else le_protocol(LeParams(D=D))
            cap = UNCAPPED if budget is None else budget(n, D)
            for policy in ("q0", "random"):
                for s in range(seeds):
                    g = static_graph(n, D, s)
                    init = static_init(proto, n, s, policy)
                    rec = static_run(g, proto, task, Scheduler(), init, s, int(cap), 2 * D + 4, D)
                    tr = rec.pop("_trace")
                    rec.update(n=n, D=D, policy=policy)
                    if with_z:
                        phases = mis_phases(tr.configs, g, D)
                        rec["phases"] = len(phases)
                        rec["z_mismatch"] = [m for ph in phases for m in z_oracle(ph, g)]
                    yield rec


def le_injection(n: int, D: int, seed: int, leaders: int, epochs: int = 5):
    """First round at which some node enters Restart from a zero- or two-leader verify state."""
    proto = le_protocol(LeParams(D=D))
    g = static_graph(n, D, seed)
    rng = np.random.default_rng([seed, n, D, leaders])
    who = set(rng.choice(n, size=leaders, replace=False).tolist()) if leaders else set()
    k_id = proto.params["k_id"]
    init = tuple(V(0, 1, int(rng.integers(1, k_id + 1))) if v in who else V(0, 0, None) for v in range(n))
    tr = run(g, proto, Scheduler(), init, MaxSteps(epochs * D), seed)
    return next((t for t, c in enumerate(tr.configs) if any(is_sigma(q) for q in c)), None)


def sync_runs(task: str, seeds: int, budget):
    """Synchronized AlgMIS / AlgLE from random product states under random-fair(B=3)."""
    for s in range(seeds):
        D = 2 + s % 2
        n = 4 + (s * 5) % 13
        g = random_bounded_diameter(n, D, seed=555 + s)
        pi = mis_protocol(MisParams(D=D)) if task == "MIS" else le_protocol(LeParams(D=D))
        star = synchronize(pi, D)
        rng = np.random.default_rng([s, 0x5A])
        init = tuple(star.sample_state(rng) for _ in range(n))
        cap = int(budget(n, D))
        rec = static_run(g, star, task, Scheduler("random-fair", seed=s, B=3), init, s, cap, 2 * D + 4, D,
                         au_monitors=True)
        rec.pop("_trace")
        rec.update(n=n, D=D, budget=cap)
        yield rec
