"""Slow reference implementations used to cross-check the fast paths.

Nothing here shares code with the simulator beyond the plain data types:
OSPF is Floyd-Warshall, BGP is an exhaustive search over per-router route
choices for assignments that are stable under the decision process.
"""
from __future__ import annotations

import itertools
from typing import NamedTuple

import numpy as np

from .netsim import BgpConfig, ForwardingPlane, Topology, node_key, sorted_nodes

INF = float("inf")


def floyd_warshall(topo: Topology):
    """(dist, next_hop) dicts keyed by (src, dst) over internal routers."""
    nodes = sorted_nodes(topo.internal_routers)
    idx = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    d = np.full((n, n), INF)
    np.fill_diagonal(d, 0)
    w = {}
    for link in topo.links:
        i, j = idx[link.a], idx[link.b]
        d[i, j] = d[j, i] = min(d[i, j], link.weight)
        w[(link.a, link.b)] = w[(link.b, link.a)] = link.weight
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    dist = {(a, b): d[idx[a], idx[b]] for a in nodes for b in nodes}
    nxt = {}
    for a in nodes:
        nbrs = sorted_nodes(x for x in nodes if (a, x) in w)
        for b in nodes:
            if a == b or dist[(a, b)] == INF:
                continue
            nxt[(a, b)] = min((x for x in nbrs if w[(a, x)] + dist[(x, b)] == dist[(a, b)]),
                              key=node_key)
    return dist, nxt


class _Route(NamedTuple):
    seed: int            # index into cfg.imports
    egress: str
    sender: str | None   # iBGP neighbour it came from, None if learned over eBGP
    hops: int = 0        # iBGP sessions crossed


def _better(a, b, seeds, igp):
    """True if route ``a`` beats route ``b`` at the router with costs ``igp``."""
    sa, sb = seeds[a.seed], seeds[b.seed]
    if sa.local_pref != sb.local_pref:
        return sa.local_pref > sb.local_pref
    if sa.as_path_len != sb.as_path_len:
        return sa.as_path_len < sb.as_path_len
    if sa.origin != sb.origin:
        return sa.origin < sb.origin
    ext_a, ext_b = a.sender is None, b.sender is None
    if ext_a != ext_b:
        return ext_a
    ca, cb = igp(a.egress), igp(b.egress)
    if ca != cb:
        return ca < cb
    if sa.peer_id != sb.peer_id:
        return sa.peer_id < sb.peer_id
    if a.egress != b.egress:
        return node_key(a.egress) < node_key(b.egress)
    if a.hops != b.hops:
        return a.hops < b.hops
    return node_key(a.sender or "") < node_key(b.sender or "")


class _Problem:
    def __init__(self, topo: Topology, cfg: BgpConfig, dest):
        self.routers = sorted_nodes(topo.internal_routers)
        self.rr = cfg.route_reflectors
        self.seeds = cfg.imports
        self.dist, _ = floyd_warshall(topo)
        self.nbrs = {r: [] for r in self.routers}
        for pair in cfg.ibgp_sessions:
            a, b = tuple(pair)
            self.nbrs[a].append(b)
            self.nbrs[b].append(a)
        self.ebgp = {r: [] for r in self.routers}
        for i, s in enumerate(self.seeds):
            if s.dest != dest or not s.valid:
                continue
            for r in self.routers:
                if (r, s.peer) in cfg.ebgp_sessions:
                    self.ebgp[r].append(i)

    def sends(self, u, route, v):
        if route.sender is None:
            return True
        if u not in self.rr:
            return False
        if route.sender not in self.rr:
            return v != route.sender
        return v not in self.rr

    def best(self, r, choice):
        igp = lambda e: 0 if e == r else self.dist[(r, e)]
        cands = [_Route(i, r, None) for i in self.ebgp[r]]
        for u in self.nbrs[r]:
            got = choice.get(u)
            if got is None or got.egress == r or not self.sends(u, got, r):
                continue
            cands.append(_Route(got.seed, got.egress, u, got.hops + 1))
        best = None
        for c in cands:
            if best is None or _better(c, best, self.seeds, igp):
                best = c
        return best

    def matches(self, r, chosen, best):
        if chosen is None or best is None:
            return chosen is best
        if r in self.rr:
            return chosen == best
        # a non-reflector never re-advertises, so its sender is irrelevant
        return chosen[:2] == best[:2]

    def options(self, r):
        out = [None] + [_Route(i, r, None) for i in self.ebgp[r]]
        remote = [(i, e) for e in self.routers if e != r for i in self.ebgp[e]]
        if r in self.rr:
            # a reflector hears a route from its egress (1 hop) or from another
            # reflector that heard it first-hand (2 hops); nothing longer is sent on
            out += [_Route(i, e, u, h) for i, e in remote for u in self.nbrs[r] for h in (1, 2)]
        else:
            out += [_Route(i, e, "*") for i, e in remote]
        return out


def stable_choices(topo: Topology, cfg: BgpConfig, dest):
    """Every stable per-router route choice for ``dest`` (backtracking search)."""
    p = _Problem(topo, cfg, dest)
    order = sorted(p.routers, key=lambda r: (r not in p.rr, node_key(r)))
    pos = {r: i for i, r in enumerate(order)}
    # router r can be checked once it and all its iBGP neighbours are assigned
    ready = {i: [] for i in range(len(order))}
    for r in order:
        ready[max([pos[r]] + [pos[u] for u in p.nbrs[r]])].append(r)
    opts = [p.options(r) for r in order]
    found = []
    choice = {}

    def visit(i):
        if i == len(order):
            found.append(dict(choice))
            return
        r = order[i]
        for o in opts[i]:
            choice[r] = o
            if all(p.matches(x, choice[x], p.best(x, choice)) for x in ready[i]):
                visit(i + 1)
        del choice[r]

    visit(0)
    return found


def _plane_part(topo, cfg, dest, choice, nxt):
    edges = set()
    for r, route in choice.items():
        if route is None:
            continue
        hop = cfg.imports[route.seed].peer if route.egress == r else nxt[(r, route.egress)]
        edges.add((r, dest, hop))
    return frozenset(edges)


def stable_planes(topo: Topology, cfg: BgpConfig):
    """dest -> set of forwarding edge sets, one per stable state."""
    _, nxt = floyd_warshall(topo)
    dests = sorted_nodes({s.dest for s in cfg.imports})
    return {d: {_plane_part(topo, cfg, d, c, nxt) for c in stable_choices(topo, cfg, d)}
            for d in dests}


def check_plane(plane: ForwardingPlane, topo: Topology, cfg: BgpConfig):
    """Agreement of ``plane`` with the exhaustive search.

    Returns ``(agrees, unique)``; with several stable states the plane only
    has to be one of them.
    """
    per_dest = stable_planes(topo, cfg)
    unique = all(len(v) == 1 for v in per_dest.values())
    for d, options in per_dest.items():
        part = frozenset(e for e in plane.edges if e[1] == d)
        if part not in options:
            return False, unique
    known = set(per_dest)
    if any(e[1] not in known for e in plane.edges):
        return False, unique
    return True, unique


def chaotic_plane(topo: Topology, cfg: BgpConfig, rng, max_sweeps=200):
    """Asynchronous best-response iteration in random router order."""
    _, nxt = floyd_warshall(topo)
    edges = set()
    for d in sorted_nodes({s.dest for s in cfg.imports}):
        p = _Problem(topo, cfg, d)
        choice = {}
        for _ in range(max_sweeps):
            changed = False
            for k in rng.permutation(len(p.routers)):
                r = p.routers[k]
                b = p.best(r, choice)
                if choice.get(r) != b:
                    if b is None:
                        choice.pop(r, None)
                    else:
                        choice[r] = b
                    changed = True
            if not changed:
                break
        else:
            return None
        edges |= _plane_part(topo, cfg, d, choice, nxt)
    return ForwardingPlane(frozenset(edges), topo.external_peers)


# -- numerics ------------------------------------------------------------------

def numeric_grad(f, x: np.ndarray, eps=1e-5):
    """Central finite differences of scalar ``f`` at ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a, b, floor=1e-6):
    """Largest elementwise |a - b| / (|a| + |b|).

    The denominator is floored so coordinates whose true gradient is zero
    are judged by finite-difference noise against ``floor``.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


# -- synthesis bounds --------------------------------------------------------

def max_consistency_over_weights(fb, values=(1, 2, 3)):
    """Best consistency reachable by any assignment of link-weight holes from ``values``.

    Only the ``connected`` weights may be open; every other argument must be
    ground.
    """
    from .errors import NetSynthError
    from .factbase import holes, substitute
    from .netsim import config_from_facts, simulate
    from .specification import consistency, spec_from_facts

    refs = holes(fb)
    if any(fb.facts[r.fact_index].predicate != "connected" for r in refs):
        raise ValueError("only link weights may be open")
    spec = spec_from_facts(fb)
    best = 0.0
    for combo in itertools.product(values, repeat=len(refs)):
        topo, cfg = config_from_facts(substitute(fb, dict(zip(refs, combo))))
        try:
            c = consistency(simulate(topo, cfg), spec)
        except NetSynthError:
            continue
        best = max(best, c)
        if best == 1.0:
            break
    return best
