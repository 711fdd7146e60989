from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from stoneage.engine import HoldsFor, MaxSteps, Scheduler, run
from stoneage.mis import (IN, OUT, U, MisParams, flag_outcomes, format_mis, initial_state,
                          mis_fault, mis_host_delta, mis_protocol, parse_mis)
from stoneage.restart import is_sigma, sigma
from stoneage.topology import Graph, complete_graph, path_graph, random_bounded_diameter
from stoneage.verification import (candidacy_oracle, check_lemma15, check_mis, mis_phases,
                                   z_dominance_oracle)

P = MisParams(D=3)


def settle(g, D, seed, init=None, rounds=600):
    proto = mis_protocol(MisParams(D=D))
    init = init or (proto.initial_state,) * g.n
    return proto, run(g, proto, Scheduler(), init, MaxSteps(rounds), seed)


def test_params_validation():
    assert MisParams(D=2).p0 == Fraction(1, 4)
    with pytest.raises(ValueError):
        MisParams(D=2, p0=Fraction(3, 4))
    with pytest.raises(ValueError):
        MisParams(D=2, k_id=1)
    assert flag_outcomes(Fraction(1, 4)) == [0, 1, 1, 1]


def test_phase_end_starts_new_phase():
    D = P.D
    q = U(0, D + 2, 0, None, "t")
    assert mis_host_delta(q, frozenset({q}), P) == (initial_state(),)
    o = OUT(0, D + 2)
    assert mis_host_delta(o, frozenset({o, IN(0, D + 2, 1)}), P) == (OUT(1, 0),)


def test_step_gap_triggers_restart():
    q = U(0, 3, 1, None, "t")
    assert mis_fault(q, frozenset({q, U(0, 5, 1, None, "t")}), P)


def test_step_follows_minimum():
    q = U(0, 3, 0, None, "t")
    out = mis_host_delta(q, frozenset({q, U(0, 2, 0, None, "t")}), P)
    assert {x.step for x in out} == {3}


def test_flag_reset_probability_encoding():
    q = U(1, 0, 1, None, "t")
    out = mis_host_delta(q, frozenset({q}), P)
    assert len(out) == 8
    assert sum(1 for x in out if x.flag == 0) / len(out) == Fraction(1, 4)


def test_candidate_knocked_out():
    q = U(0, 2, 1, 0, "o")
    nb = U(0, 2, 1, 1, "o")
    (nxt,) = mis_host_delta(q, frozenset({q, nb}), P)
    assert nxt.cand == 0
    (nxt,) = mis_host_delta(q, frozenset({q, U(0, 2, 0, 1, "o")}), P)
    assert nxt.cand == 1


def test_join_in_and_out():
    D = P.D
    q = U(0, D, 1, 1, "o")
    out = mis_host_delta(q, frozenset({q}), P)
    assert {x.tag for x in out} == {"IN"} and {x.step for x in out} == {D + 1}
    u = U(0, D + 1, 0, None, "t")
    assert mis_host_delta(u, frozenset({u, IN(0, D + 1, 2)}), P) == (OUT(0, D + 2),)


def test_detection_rules():
    assert mis_fault(OUT(0, 2), frozenset({OUT(0, 2)}), P)
    assert mis_fault(IN(0, 2, 1), frozenset({IN(0, 2, 1), IN(0, 2, 2)}), P)
    assert not mis_fault(IN(0, 2, 1), frozenset({IN(0, 2, 1), OUT(0, 2)}), P)
    assert not mis_fault(OUT(0, 2), frozenset({OUT(0, 2), IN(0, 2, 3)}), P)


def test_serialization_round_trip():
    p = mis_protocol(P)
    for q in p.states:
        assert p.parse_state(p.format_state(q)) == q
    assert format_mis(U(1, 0, 1, None, "t")) == "U|f1|s0|c1_t"
    with pytest.raises(ValueError):
        parse_mis("IN|x")


def test_lone_node_joins_in_first_phase():
    g = Graph.from_edges(1, [])
    proto, tr = settle(g, 1, 0, rounds=200)
    first_in = next(t for t, c in enumerate(tr.configs) if c[0].tag == "IN")
    assert all(c[0].tag == "U" for c in tr.configs[:first_in])
    assert all(c[0].tag == "IN" for c in tr.configs[first_in:])


def test_complete_graph_single_in():
    proto, tr = settle(complete_graph(4), 1, 3)
    assert proto.output_vector(tr.configs[-1]).count(1) == 1


def test_path_of_three_mis():
    for seed in range(10):
        proto, tr = settle(path_graph(3), 2, seed)
        out = proto.output_vector(tr.configs[-1])
        assert out in ((0, 1, 0), (1, 0, 1))


def test_adjacent_ins_get_detected():
    g = path_graph(2)
    proto = mis_protocol(MisParams(D=1))
    hits = 0
    for seed in range(40):
        tr = run(g, proto, Scheduler(), (IN(0, 1, 1), IN(0, 1, 1)), MaxSteps(1), seed)
        # redraws from matching ids; the next step notices any mismatch
        tr = run(g, proto, Scheduler(), tr.configs[1], MaxSteps(1), seed)
        hits += any(is_sigma(q) for q in tr.configs[1]) == (tr.configs[0][0].tid != tr.configs[0][1].tid)
    assert hits == 40


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 12), D=st.integers(2, 3), seed=st.integers(0, 10 ** 6),
       random_init=st.booleans())
def test_runs_stabilize_and_oracles_agree(n, D, seed, random_init):
    import numpy as np
    g = random_bounded_diameter(n, D, seed)
    proto = mis_protocol(MisParams(D=D))
    if random_init:
        rng = np.random.default_rng(seed)
        init = tuple(proto.sample_state(rng) for _ in range(n))
    else:
        init = (proto.initial_state,) * n
    tr = run(g, proto, Scheduler(), init, MaxSteps(1500), seed)
    assert check_mis(proto.output_vector(tr.configs[-1]) or [0] * n, g) is None
    for ph in mis_phases(tr.configs, g, D):
        assert candidacy_oracle(ph, g) == []
        assert z_dominance_oracle(ph, g) == []
    assert check_lemma15(tr.configs, g, D) == []


def test_valid_mis_never_triggers():
    g = path_graph(3)
    proto = mis_protocol(MisParams(D=2))
    tr = run(g, proto, Scheduler(), (OUT(1, 0), IN(1, 0, 2), OUT(1, 0)), MaxSteps(300), 5)
    assert not any(is_sigma(q) for c in tr.configs for q in c)
    assert all(proto.output_vector(c) == (0, 1, 0) for c in tr.configs)
