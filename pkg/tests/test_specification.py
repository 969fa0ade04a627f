import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import DESK, SMALL
from netsynth.datagen import gen_config, gen_topology
from netsynth.errors import EmptySpecification, InsufficientCandidates
from netsynth.factbase import parse
from netsynth.netsim import ForwardingPlane, config_from_facts, simulate
from netsynth.specification import (FWD, ISOLATION, KINDS, REACHABLE, SpecFact, Specification,
                                    consistency, eval_spec_fact, extract_spec, follow_path,
                                    holds, path_spec, per_predicate_breakdown, spec_from_facts,
                                    spec_to_facts)


@pytest.fixture
def plane(worked_example):
    return simulate(*config_from_facts(worked_example))


def test_holds_on_worked_example(plane):
    assert holds(plane, SpecFact(FWD, ("B", "N1", "A")))
    assert not holds(plane, SpecFact(FWD, ("B", "N1", "D")))
    assert holds(plane, SpecFact(REACHABLE, ("B", "N1", "A")))
    assert holds(plane, SpecFact(REACHABLE, ("B", "N1", "E")))
    assert not holds(plane, SpecFact(REACHABLE, ("B", "N1", "F")))
    # the start router itself is not "via"
    assert not holds(plane, SpecFact(REACHABLE, ("B", "N1", "B")))


def test_isolation_semantics():
    p = ForwardingPlane(frozenset({("a", "n1", "b"), ("a", "n2", "b"), ("a", "n3", "c")}))
    assert not holds(p, SpecFact(ISOLATION, ("a", "b", "n1", "n2")))
    assert holds(p, SpecFact(ISOLATION, ("a", "b", "n1", "n3")))
    assert holds(p, SpecFact(ISOLATION, ("a", "c", "n1", "n2")))


def test_loop_is_not_reachable():
    p = ForwardingPlane(frozenset({("a", "n", "b"), ("b", "n", "a")}), frozenset({"e"}))
    hops, delivered = follow_path(p, "a", "n")
    assert not delivered and hops == ["b", "a"]
    assert not holds(p, SpecFact(REACHABLE, ("a", "n", "b")))


def test_consistency_and_breakdown(plane):
    spec = Specification([SpecFact(FWD, ("B", "N1", "A")), SpecFact(FWD, ("C", "N1", "D")),
                          SpecFact(FWD, ("C", "N1", "D"), False),
                          SpecFact(REACHABLE, ("B", "N1", "E"))])
    assert consistency(plane, spec) == 0.75
    assert per_predicate_breakdown(plane, spec) == {FWD: 2 / 3, REACHABLE: 1.0}
    with pytest.raises(EmptySpecification):
        consistency(plane, Specification())


def test_duplicates_count_once(plane):
    f = SpecFact(FWD, ("C", "N1", "D"))
    assert len(Specification([f, f, SpecFact(FWD, ("B", "N1", "A"))])) == 2


def test_negation_flips(plane):
    for f in [SpecFact(FWD, ("B", "N1", "A")), SpecFact(REACHABLE, ("B", "N1", "F")),
              SpecFact(ISOLATION, ("B", "A", "N1", "N1"))]:
        assert eval_spec_fact(plane, f) != eval_spec_fact(plane, f.negated())


def test_fact_roundtrip():
    fb = parse("router(A)\nfwd(A,N,B)\nnot reachable(A,N,C)\ntrafficIsolation(A,B,N,M)\n")
    spec = spec_from_facts(fb)
    assert len(spec) == 3
    assert spec_from_facts(parse("\n".join(map(str, spec_to_facts(spec))))) == spec


def _plane(seed, options=SMALL):
    topo = gen_topology([seed, 1], 4 + seed % 4, options)
    topo, cfg = gen_config([seed, 2], topo, options)
    return simulate(topo, cfg), topo


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_extracted_requirements_hold(seed):
    plane, topo = _plane(seed, DESK)
    counts = {k: 6 for k in KINDS}
    try:
        spec = extract_spec(plane, topo, counts, seed)
    except InsufficientCandidates:
        return
    assert consistency(plane, spec) == 1.0
    assert len(spec) == 18


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_path_requirements_hold_and_are_positive(seed):
    plane, topo = _plane(seed, DESK)
    spec = path_spec(plane, topo, 8, seed)
    assert len(spec) == 8
    assert all(f.kind == FWD and f.truth for f in spec)
    assert consistency(plane, spec) == 1.0


def test_positive_rate_respected():
    plane, topo = _plane(3, DESK)
    spec = extract_spec(plane, topo, {FWD: 12}, 0, positive_rate={FWD: 1.0})
    assert all(f.truth for f in spec)
    spec = extract_spec(plane, topo, {FWD: 12}, 0, positive_rate={FWD: 0.0})
    assert not any(f.truth for f in spec)


def test_insufficient_candidates():
    plane, topo = _plane(0)
    with pytest.raises(InsufficientCandidates):
        extract_spec(plane, topo, {FWD: 10_000}, 0)


def test_extraction_is_seeded():
    plane, topo = _plane(5, DESK)
    a = extract_spec(plane, topo, {k: 5 for k in KINDS}, [1, 2])
    b = extract_spec(plane, topo, {k: 5 for k in KINDS}, [1, 2])
    assert a == b
