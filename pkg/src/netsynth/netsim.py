"""BGP/OSPF control-plane simulation.

``simulate`` maps a topology plus configuration to the forwarding plane the
protocols converge to. OSPF is all-pairs shortest paths over the internal
routers; BGP is a synchronous-round propagation of imported announcements
over iBGP/eBGP sessions with standard route reflection, each router keeping
one best route per destination.
"""
from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple

from .errors import (DisconnectedTopology, IncompleteConfig, MalformedFact,
                     NoConvergence)
from .factbase import HOLE, Fact, FactBase, HoleRef, is_constant, is_int

# predicates consumed by the simulator, with their arities
PROTOCOL_ARITY = {
    "router": 1,
    "route_reflector": 1,
    "external": 1,
    "network": 1,
    "connected": 3,
    "ibgp": 2,
    "ebgp": 2,
    "bgp_route": 8,
}

ORIGIN_IGP, ORIGIN_EBGP, ORIGIN_INCOMPLETE = 0, 1, 2

_DIGITS = re.compile(r"(\d+)")


def node_key(name: str):
    """Natural sort key: ``c2`` orders before ``c10``."""
    return tuple((0, int(p)) if p.isdigit() else (1, p)
                 for p in _DIGITS.split(name) if p)


def sorted_nodes(nodes):
    return sorted(nodes, key=node_key)


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    weight: int

    @staticmethod
    def make(a, b, weight):
        if node_key(b) < node_key(a):
            a, b = b, a
        return Link(a, b, int(weight))


@dataclass(frozen=True)
class Topology:
    """Physical network: weighted internal links plus router-peer attachments."""

    internal_routers: frozenset
    external_peers: frozenset
    links: frozenset                    # Link between internal routers
    peer_links: frozenset = frozenset()  # (internal, external) pairs
    destinations: frozenset = frozenset()

    @cached_property
    def adjacency(self):
        """internal router -> {neighbor: weight}, internal links only"""
        adj = {r: {} for r in self.internal_routers}
        for link in self.links:
            adj[link.a][link.b] = link.weight
            adj[link.b][link.a] = link.weight
        return adj

    @cached_property
    def neighbors(self):
        """node -> sorted neighbors over all physical links"""
        nb = {n: set() for n in self.internal_routers | self.external_peers}
        for link in self.links:
            nb[link.a].add(link.b)
            nb[link.b].add(link.a)
        for r, e in self.peer_links:
            nb[r].add(e)
            nb[e].add(r)
        return {n: sorted_nodes(v) for n, v in nb.items()}

    def with_weights(self, weights):
        """Copy with internal link weights replaced; ``weights`` maps (a, b) -> w."""
        links = frozenset(Link.make(l.a, l.b, weights[(l.a, l.b)]) for l in self.links)
        return replace(self, links=links)


class RouteSeed(NamedTuple):
    """One imported announcement, i.e. one ``bgp_route`` fact."""
    peer: str
    dest: str
    local_pref: int
    as_path_len: int
    origin: int
    med: int
    valid: int
    peer_id: int


@dataclass(frozen=True)
class BgpConfig:
    ibgp_sessions: frozenset            # frozenset({a, b}) pairs
    ebgp_sessions: frozenset            # (internal, external)
    route_reflectors: frozenset
    imports: tuple                      # RouteSeed, in fact order

    @cached_property
    def ibgp_neighbors(self):
        nb = {}
        for pair in self.ibgp_sessions:
            a, b = tuple(pair)
            nb.setdefault(a, set()).add(b)
            nb.setdefault(b, set()).add(a)
        return {r: sorted_nodes(v) for r, v in nb.items()}


@dataclass(frozen=True, slots=True)
class Announcement:
    dest: str
    local_pref: int
    as_path_len: int
    origin: int
    med: int
    learned_external: bool
    egress: str
    igp_cost: int
    peer_id: int
    peer: str                          # external peer that originated the route
    learned_from: str | None = None    # iBGP neighbour, None when eBGP-learned
    ibgp_hops: int = 0                 # iBGP sessions crossed, a cluster-list length


class OspfRoute(NamedTuple):
    distance: int
    next_hop: str | None


@dataclass(frozen=True)
class ForwardingPlane:
    edges: frozenset      # (router, dest, next_hop)
    # nodes outside the AS; reaching one counts as delivery
    externals: frozenset = field(default=frozenset(), compare=False)
    next_hop: dict = field(init=False, compare=False, repr=False, hash=False)

    def __post_init__(self):
        nh = {}
        for r, d, n in self.edges:
            if (r, d) in nh:
                raise ValueError(f"two next hops for {(r, d)}")
            nh[(r, d)] = n
        object.__setattr__(self, "next_hop", nh)

    def __len__(self):
        return len(self.edges)

    def destinations(self):
        return sorted_nodes({d for _, d, _ in self.edges})

    def sorted_edges(self):
        return sorted(self.edges, key=lambda e: (node_key(e[1]), node_key(e[0])))

    def to_facts(self):
        return [Fact("fwd", (r, d, n)) for r, d, n in self.sorted_edges()]


# -- OSPF ------------------------------------------------------------------

def ospf_distances(topo: Topology) -> dict:
    """All-pairs shortest paths over internal routers.

    Equal-cost ties pick the neighbour with the smallest node id.
    """
    adj = topo.adjacency
    routers = sorted_nodes(topo.internal_routers)
    dist = {}
    for src in routers:
        d = {src: 0}
        heap = [(0, src)]
        while heap:
            du, u = heapq.heappop(heap)
            if du > d[u]:
                continue
            for v, w in adj[u].items():
                nd = du + w
                if nd < d.get(v, nd + 1):
                    d[v] = nd
                    heapq.heappush(heap, (nd, v))
        if len(d) != len(routers):
            raise DisconnectedTopology(f"{src} reaches {len(d)} of {len(routers)} routers")
        dist[src] = d
    table = {}
    for r in routers:
        nbrs = sorted(adj[r].items(), key=lambda kv: node_key(kv[0]))
        for e in routers:
            if r == e:
                table[(r, e)] = OspfRoute(0, None)
                continue
            target = dist[r][e]
            hop = next(x for x, w in nbrs if w + dist[x][e] == target)
            table[(r, e)] = OspfRoute(target, hop)
    return table


# -- BGP -------------------------------------------------------------------

def preference_key(a: Announcement, use_med: bool = False):
    """Sort key of the decision process; smaller is preferred."""
    return (-a.local_pref,
            a.as_path_len,
            a.origin,
            a.med if use_med else 0,
            0 if a.learned_external else 1,
            a.igp_cost,
            a.peer_id,
            # residue for routes that tie on every attribute: the shorter
            # reflection chain wins, as with cluster-list length
            node_key(a.egress),
            a.ibgp_hops,
            node_key(a.learned_from or ""))


def bgp_prefer(a: Announcement, b: Announcement, use_med: bool = False) -> Announcement:
    """The winner of the pairwise BGP decision process."""
    if a.dest != b.dest:
        raise ValueError("announcements for different destinations")
    return a if preference_key(a, use_med) <= preference_key(b, use_med) else b


def _advertises(sender, best: Announcement, receiver, reflectors):
    if best.learned_external:
        return True
    if sender not in reflectors:
        return False
    if best.learned_from not in reflectors:
        # learned from a client: reflect to every other iBGP peer
        return receiver != best.learned_from
    # learned from a non-client: reflect to clients only
    return receiver not in reflectors


def converge(topo: Topology, cfg: BgpConfig, max_rounds: int | None = None,
             use_med: bool = False, ospf: dict | None = None):
    """Run synchronous BGP rounds to a fixpoint; returns (selection, rounds)."""
    routers = sorted_nodes(topo.internal_routers)
    if max_rounds is None:
        max_rounds = 4 * len(routers)
    if ospf is None:
        ospf = ospf_distances(topo)
    reflectors = cfg.route_reflectors
    ibgp_nb = cfg.ibgp_neighbors
    dests = sorted_nodes({s.dest for s in cfg.imports})

    external = {}
    ebgp = set(cfg.ebgp_sessions)
    for s in cfg.imports:
        if not s.valid:
            continue
        for r in routers:
            if (r, s.peer) in ebgp:
                external.setdefault((r, s.dest), []).append(Announcement(
                    s.dest, s.local_pref, s.as_path_len, s.origin, s.med,
                    True, r, 0, s.peer_id, s.peer, None))

    state = {}
    for rounds in range(1, max_rounds + 1):
        new = {}
        for r in routers:
            nbrs = ibgp_nb.get(r, ())
            for d in dests:
                cands = list(external.get((r, d), ()))
                for u in nbrs:
                    best = state.get((u, d))
                    if best is None or best.egress == r:
                        continue
                    if not _advertises(u, best, r, reflectors):
                        continue
                    cands.append(replace(best, learned_external=False,
                                         igp_cost=ospf[(r, best.egress)].distance,
                                         learned_from=u, ibgp_hops=best.ibgp_hops + 1))
                if cands:
                    new[(r, d)] = min(cands, key=lambda a: preference_key(a, use_med))
        if new == state:
            return new, rounds
        state = new
    raise NoConvergence(max_rounds)


def bgp_converge(topo: Topology, cfg: BgpConfig, max_rounds: int | None = None,
                 use_med: bool = False) -> dict:
    return converge(topo, cfg, max_rounds, use_med)[0]


def plane_from_selection(selection: dict, ospf: dict, externals=frozenset()) -> ForwardingPlane:
    edges = set()
    for (r, d), ann in selection.items():
        hop = ann.peer if ann.egress == r else ospf[(r, ann.egress)].next_hop
        edges.add((r, d, hop))
    return ForwardingPlane(frozenset(edges), frozenset(externals))


def simulate(topo: Topology, cfg: BgpConfig, max_rounds: int | None = None,
             use_med: bool = False) -> ForwardingPlane:
    ospf = ospf_distances(topo)
    selection, _ = converge(topo, cfg, max_rounds, use_med, ospf)
    return plane_from_selection(selection, ospf, topo.external_peers)


# -- fact base mapping -------------------------------------------------------

def config_from_facts(fb: FactBase):
    """Decode the protocol facts of a fact base into (Topology, BgpConfig).

    Specification facts and unknown predicates are ignored. A zero link
    weight is read as the OSPF minimum cost of 1.
    """
    missing = [HoleRef(i, j) for i, f in enumerate(fb.facts) if f.predicate in PROTOCOL_ARITY
               for j, a in enumerate(f.args) if a is HOLE]
    if missing:
        raise IncompleteConfig(missing)

    groups = {p: [] for p in PROTOCOL_ARITY}
    for f in fb.facts:
        if f.predicate not in PROTOCOL_ARITY or not f.truth:
            continue
        if len(f.args) != PROTOCOL_ARITY[f.predicate]:
            raise MalformedFact(f"{f}: {f.predicate} takes {PROTOCOL_ARITY[f.predicate]} arguments")
        groups[f.predicate].append(f.args)

    def const(args, *pos):
        for p in pos:
            if not is_constant(args[p]):
                raise MalformedFact(f"expected a constant at position {p} in {args}")

    def integer(args, *pos):
        for p in pos:
            if not is_int(args[p]):
                raise MalformedFact(f"expected an integer at position {p} in {args}")

    for p in ("router", "route_reflector", "external", "network"):
        for args in groups[p]:
            const(args, 0)
    reflectors = frozenset(a[0] for a in groups["route_reflector"])
    internal = frozenset(a[0] for a in groups["router"]) | reflectors
    externals = frozenset(a[0] for a in groups["external"])
    networks = frozenset(a[0] for a in groups["network"])
    if internal & externals:
        raise MalformedFact(f"nodes both internal and external: {sorted_nodes(internal & externals)}")

    links = {}
    for args in groups["connected"]:
        const(args, 0, 1)
        integer(args, 2)
        a, b, w = args
        if a not in internal or b not in internal or a == b:
            raise MalformedFact(f"connected({a},{b},{w}) must join two distinct routers")
        link = Link.make(a, b, max(w, 1))
        links[(link.a, link.b)] = link

    ibgp = set()
    for args in groups["ibgp"]:
        const(args, 0, 1)
        a, b = args
        if a not in internal or b not in internal:
            raise MalformedFact(f"ibgp({a},{b}) must join internal routers")
        if a != b:
            ibgp.add(frozenset((a, b)))

    ebgp = set()
    for args in groups["ebgp"]:
        const(args, 0, 1)
        r, e = args
        if r not in internal or e not in externals:
            raise MalformedFact(f"ebgp({r},{e}) must join a router and an external peer")
        ebgp.add((r, e))

    imports = []
    for args in groups["bgp_route"]:
        const(args, 0, 1)
        integer(args, 2, 3, 4, 5, 6, 7)
        if args[0] not in externals or args[1] not in networks:
            raise MalformedFact(f"bgp_route{args}: unknown peer or network")
        if args[4] not in (ORIGIN_IGP, ORIGIN_EBGP, ORIGIN_INCOMPLETE):
            raise MalformedFact(f"bgp_route{args}: origin must be 0, 1 or 2")
        imports.append(RouteSeed(*args))

    topo = Topology(internal, externals, frozenset(links.values()),
                    frozenset(ebgp), networks)
    cfg = BgpConfig(frozenset(ibgp), frozenset(ebgp), reflectors, tuple(imports))
    return topo, cfg


def facts_from_config(topo: Topology, cfg: BgpConfig, weights: bool = True) -> list[Fact]:
    """Inverse of :func:`config_from_facts` (protocol facts only)."""
    facts = [Fact("router", (r,)) for r in sorted_nodes(topo.internal_routers - cfg.route_reflectors)]
    facts += [Fact("network", (n,)) for n in sorted_nodes(topo.destinations)]
    facts += [Fact("external", (e,)) for e in sorted_nodes(topo.external_peers)]
    facts += [Fact("route_reflector", (r,)) for r in sorted_nodes(cfg.route_reflectors)]
    links = sorted(topo.links, key=lambda l: (node_key(l.a), node_key(l.b)))
    facts += [Fact("connected", (l.a, l.b, l.weight if weights else HOLE)) for l in links]
    pairs = sorted((tuple(sorted_nodes(p)) for p in cfg.ibgp_sessions),
                   key=lambda p: (node_key(p[0]), node_key(p[1])))
    facts += [Fact("ibgp", p) for p in pairs]
    ebgp = sorted(cfg.ebgp_sessions, key=lambda p: (node_key(p[0]), node_key(p[1])))
    facts += [Fact("ebgp", p) for p in ebgp]
    facts += [Fact("bgp_route", tuple(s)) for s in cfg.imports]
    return facts
