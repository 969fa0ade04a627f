import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SMALL
from netsynth import oracles
from netsynth.datagen import gen_config, gen_topology
from netsynth.errors import DisconnectedTopology, IncompleteConfig, MalformedFact, NoConvergence
from netsynth.factbase import FactBase, parse
from netsynth.netsim import (Announcement, BgpConfig, Link, RouteSeed, Topology, bgp_prefer,
                             config_from_facts, converge, facts_from_config, node_key,
                             ospf_distances, simulate)


def test_worked_example(worked_example):
    topo, cfg = config_from_facts(worked_example)
    plane = simulate(topo, cfg)
    assert plane.edges == {("A", "N1", "E"), ("B", "N1", "A"), ("C", "N1", "A"), ("D", "N1", "F")}
    selection, _ = converge(topo, cfg)
    assert selection[("B", "N1")].egress == "A"
    assert selection[("B", "N1")].igp_cost == 2
    assert selection[("D", "N1")].learned_external


def test_node_key_is_natural():
    assert sorted(["c10", "c2", "c1"], key=node_key) == ["c1", "c2", "c10"]


def _ann(**kw):
    base = dict(dest="n", local_pref=1, as_path_len=1, origin=0, med=0, learned_external=False,
                egress="a", igp_cost=1, peer_id=1, peer="e")
    base.update(kw)
    return Announcement(**base)


@pytest.mark.parametrize("better,worse", [
    (dict(local_pref=5), dict(local_pref=4, as_path_len=0)),
    (dict(as_path_len=1), dict(as_path_len=2, origin=0, igp_cost=0)),
    (dict(origin=0), dict(origin=1, learned_external=True)),
    (dict(learned_external=True, igp_cost=9), dict(learned_external=False, igp_cost=0)),
    (dict(igp_cost=1), dict(igp_cost=2, peer_id=0)),
    (dict(peer_id=1), dict(peer_id=2)),
])
def test_decision_order(better, worse):
    a, b = _ann(**better), _ann(**worse)
    assert bgp_prefer(a, b) is a and bgp_prefer(b, a) is a


def test_med_only_when_enabled():
    a, b = _ann(med=5, peer_id=1), _ann(med=1, peer_id=2)
    assert bgp_prefer(a, b) is a
    assert bgp_prefer(a, b, use_med=True) is b


def _line(n, weights, reflectors=(), mesh=True):
    routers = [f"r{i}" for i in range(n)]
    links = frozenset(Link.make(routers[i], routers[i + 1], w) for i, w in enumerate(weights))
    topo = Topology(frozenset(routers), frozenset({"e"}), links, frozenset({("r0", "e")}),
                    frozenset({"n"}))
    if mesh:
        sessions = {frozenset((a, b)) for a in routers for b in routers if a != b}
    else:
        sessions = {frozenset((r, c)) for r in reflectors for c in routers if c != r}
    cfg = BgpConfig(frozenset(sessions), frozenset({("r0", "e")}), frozenset(reflectors),
                    (RouteSeed("e", "n", 1, 1, 0, 0, 1, 9),))
    return topo, cfg


def test_non_reflector_does_not_readvertise():
    # r0 - r1 - r2 with sessions r0-r1 and r1-r2 only, no reflectors
    topo, cfg = _line(3, [1, 1])
    cfg = BgpConfig(frozenset({frozenset(("r0", "r1")), frozenset(("r1", "r2"))}),
                    cfg.ebgp_sessions, frozenset(), cfg.imports)
    assert {e[0] for e in simulate(topo, cfg).edges} == {"r0", "r1"}


def test_reflector_forwards_client_routes():
    topo, cfg = _line(3, [1, 1])
    cfg = BgpConfig(frozenset({frozenset(("r0", "r1")), frozenset(("r1", "r2"))}),
                    cfg.ebgp_sessions, frozenset({"r1"}), cfg.imports)
    plane = simulate(topo, cfg)
    assert plane.next_hop[("r2", "n")] == "r1"
    assert plane.next_hop[("r0", "n")] == "e"


def test_ospf_tie_picks_smallest_neighbor():
    # square a-b-d, a-c-d with equal costs
    links = frozenset({Link.make("a", "b", 1), Link.make("b", "d", 1),
                       Link.make("a", "c", 1), Link.make("c", "d", 1)})
    topo = Topology(frozenset("abcd"), frozenset(), links)
    assert ospf_distances(topo)[("a", "d")].next_hop == "b"
    assert ospf_distances(topo)[("a", "d")].distance == 2


def test_disconnected():
    topo = Topology(frozenset("ab"), frozenset(), frozenset())
    with pytest.raises(DisconnectedTopology):
        ospf_distances(topo)


def test_no_convergence_bound(worked_example):
    topo, cfg = config_from_facts(worked_example)
    with pytest.raises(NoConvergence):
        simulate(topo, cfg, max_rounds=1)


def test_incomplete_and_malformed():
    with pytest.raises(IncompleteConfig) as e:
        config_from_facts(parse("router(A)\nrouter(B)\nconnected(A,B,?)\n"))
    assert len(e.value.holes) == 1
    with pytest.raises(MalformedFact):
        config_from_facts(parse("router(A)\nconnected(A,B,1)\n"))
    with pytest.raises(MalformedFact):
        config_from_facts(parse("router(A)\nexternal(E)\nnetwork(N)\nbgp_route(E,N,1,1,3,0,1,1)\n"))


def test_zero_weight_reads_as_one():
    topo, _ = config_from_facts(parse("router(A)\nrouter(B)\nconnected(A,B,0)\n"))
    assert next(iter(topo.links)).weight == 1


def test_specification_facts_are_ignored(worked_example):
    extra = FactBase(list(worked_example) + list(parse("fwd(A,N1,B)\nfoo(A)\n")))
    assert simulate(*config_from_facts(extra)) == simulate(*config_from_facts(worked_example))


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_facts_roundtrip(seed):
    rng = np.random.default_rng(seed)
    topo = gen_topology([seed, 1], int(rng.integers(3, 7)), SMALL)
    topo, cfg = gen_config([seed, 2], topo, SMALL)
    topo2, cfg2 = config_from_facts(FactBase(facts_from_config(topo, cfg)))
    assert topo2 == topo
    assert cfg2 == cfg


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_ospf_matches_floyd_warshall(seed):
    topo = gen_topology([seed, 1], 3 + seed % 6, SMALL)
    topo, _ = gen_config([seed, 2], topo, SMALL)
    table = ospf_distances(topo)
    dist, nxt = oracles.floyd_warshall(topo)
    for (a, b), route in table.items():
        assert route.distance == dist[(a, b)]
        if a != b:
            assert route.next_hop == nxt[(a, b)]


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_bgp_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    topo = gen_topology([seed, 1], int(rng.integers(3, 7)), SMALL)
    topo, cfg = gen_config([seed, 2], topo, SMALL)
    plane = simulate(topo, cfg)
    agrees, _ = oracles.check_plane(plane, topo, cfg)
    assert agrees
    chaotic = oracles.chaotic_plane(topo, cfg, np.random.default_rng(seed))
    assert chaotic is not None and chaotic.edges == plane.edges


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_every_router_with_a_session_path_gets_a_route(seed):
    topo = gen_topology([seed, 1], 3 + seed % 6, SMALL)
    topo, cfg = gen_config([seed, 2], topo, SMALL)
    plane = simulate(topo, cfg)
    for r, d, hop in plane.edges:
        assert hop in topo.neighbors[r]
