"""Forwarding requirements, their evaluation and the consistency score."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import EmptySpecification, InsufficientCandidates, MalformedFact
from .factbase import Fact, FactBase
from .netsim import ForwardingPlane, Topology, node_key, sorted_nodes

FWD, REACHABLE, ISOLATION = "fwd", "reachable", "trafficIsolation"
KINDS = (FWD, REACHABLE, ISOLATION)
ARITY = {FWD: 3, REACHABLE: 3, ISOLATION: 4}

# share of positive facts per kind when ``extract_spec`` mixes polarities
DEFAULT_POSITIVE_RATE = {FWD: 0.15, REACHABLE: 0.15, ISOLATION: 0.95}


@dataclass(frozen=True)
class SpecFact:
    """fwd(r, net, next) / reachable(r, net, via) / trafficIsolation(r1, r2, n1, n2)"""

    kind: str
    args: tuple
    truth: bool = True

    def __post_init__(self):
        if self.kind not in ARITY:
            raise ValueError(f"unknown requirement kind {self.kind!r}")
        if len(self.args) != ARITY[self.kind]:
            raise ValueError(f"{self.kind} takes {ARITY[self.kind]} arguments")

    def negated(self):
        return SpecFact(self.kind, self.args, not self.truth)

    def to_fact(self):
        return Fact(self.kind, self.args, self.truth)

    def __str__(self):
        return str(self.to_fact())


class Specification:
    """Ordered set of requirements; identical duplicates count once."""

    __slots__ = ("facts",)

    def __init__(self, facts: Iterable[SpecFact] = ()):
        self.facts = tuple(dict.fromkeys(facts))

    def __len__(self):
        return len(self.facts)

    def __iter__(self):
        return iter(self.facts)

    def __eq__(self, other):
        return isinstance(other, Specification) and self.facts == other.facts

    def __repr__(self):
        return f"Specification({len(self.facts)} facts)"

    def kinds(self):
        return [k for k in KINDS if any(f.kind == k for f in self.facts)]


def spec_from_facts(fb: FactBase) -> Specification:
    out = []
    for f in fb.facts:
        if f.predicate not in ARITY:
            continue
        if f.has_hole() or not all(isinstance(a, str) for a in f.args):
            raise MalformedFact(f"requirement {f} must name nodes only")
        if len(f.args) != ARITY[f.predicate]:
            raise MalformedFact(f"{f.predicate} takes {ARITY[f.predicate]} arguments")
        out.append(SpecFact(f.predicate, f.args, f.truth))
    return Specification(out)


def spec_to_facts(spec: Specification) -> list[Fact]:
    return [sf.to_fact() for sf in spec]


# -- evaluation ----------------------------------------------------------------

def follow_path(plane: ForwardingPlane, start, net, limit=None):
    """Nodes visited after ``start`` and whether traffic left the AS.

    Returns ``(hops, delivered)``; a dead end or a revisit stops the walk with
    ``delivered`` False.
    """
    nh = plane.next_hop
    exits = plane.externals
    limit = limit if limit is not None else len(nh) + 1
    hops = []
    seen = {start}
    cur = start
    for _ in range(limit):
        nxt = nh.get((cur, net))
        if nxt is None:
            return hops, False
        hops.append(nxt)
        if nxt in exits:
            return hops, True
        if nxt in seen:
            return hops, False
        seen.add(nxt)
        cur = nxt
    return hops, False


def holds(plane: ForwardingPlane, sf: SpecFact) -> bool:
    """Truth of the positive form of ``sf`` in ``plane``."""
    nh = plane.next_hop
    if sf.kind == FWD:
        r, net, nxt = sf.args
        return nh.get((r, net)) == nxt
    if sf.kind == REACHABLE:
        r, net, via = sf.args
        hops, delivered = follow_path(plane, r, net)
        return delivered and via in hops
    r1, r2, n1, n2 = sf.args
    return not (nh.get((r1, n1)) == r2 and nh.get((r1, n2)) == r2)


def eval_spec_fact(plane: ForwardingPlane, sf: SpecFact) -> bool:
    return holds(plane, sf) == sf.truth


def satisfied_count(plane, spec: Specification) -> int:
    return sum(eval_spec_fact(plane, sf) for sf in spec)


def consistency(plane: ForwardingPlane, spec: Specification) -> float:
    if len(spec) == 0:
        raise EmptySpecification("consistency of an empty specification")
    return satisfied_count(plane, spec) / len(spec)


def per_predicate_breakdown(plane: ForwardingPlane, spec: Specification) -> dict:
    """kind -> consistency restricted to that kind; absent kinds are omitted."""
    if len(spec) == 0:
        raise EmptySpecification("breakdown of an empty specification")
    total, good = {}, {}
    for sf in spec:
        total[sf.kind] = total.get(sf.kind, 0) + 1
        good[sf.kind] = good.get(sf.kind, 0) + eval_spec_fact(plane, sf)
    return {k: good[k] / total[k] for k in KINDS if k in total}


# -- extraction ----------------------------------------------------------------

def _candidates(plane: ForwardingPlane, topo: Topology):
    """Positive and negative requirement pools per kind, in canonical order."""
    nh = plane.next_hop
    routers = sorted_nodes(topo.internal_routers)
    nets = plane.destinations()
    nodes = sorted_nodes(topo.internal_routers | topo.external_peers)
    pools = {k: ([], []) for k in KINDS}

    for net in nets:
        for r in routers:
            hop = nh.get((r, net))
            if hop is None:
                continue
            pools[FWD][0].append(SpecFact(FWD, (r, net, hop), True))
            for x in topo.neighbors[r]:
                if x != hop:
                    pools[FWD][1].append(SpecFact(FWD, (r, net, x), False))
            hops, delivered = follow_path(plane, r, net)
            on_path = set(hops) if delivered else set()
            for v in hops if delivered else ():
                pools[REACHABLE][0].append(SpecFact(REACHABLE, (r, net, v), True))
            for v in nodes:
                if v != r and v not in on_path:
                    pools[REACHABLE][1].append(SpecFact(REACHABLE, (r, net, v), False))

    for i, n1 in enumerate(nets):
        for n2 in nets[i + 1:]:
            for r in routers:
                h1, h2 = nh.get((r, n1)), nh.get((r, n2))
                if h1 is None and h2 is None:
                    continue
                if h1 == h2:
                    pools[ISOLATION][1].append(SpecFact(ISOLATION, (r, h1, n1, n2), False))
                    continue
                for h in (h1, h2):
                    if h is not None:
                        pools[ISOLATION][0].append(SpecFact(ISOLATION, (r, h, n1, n2), True))
    return pools


def extract_spec(plane: ForwardingPlane, topo: Topology, counts: Mapping[str, int],
                 rng_seed, positive_rate: Mapping[str, float] | None = None) -> Specification:
    """Random requirements that all hold in ``plane``.

    Each requirement is positive with probability ``positive_rate[kind]``;
    when one polarity runs out the other fills in.
    """
    if not plane.edges:
        raise InsufficientCandidates("plane", 1, 0)
    rates = dict(DEFAULT_POSITIVE_RATE)
    rates.update(positive_rate or {})
    rng = np.random.default_rng(rng_seed)
    pools = _candidates(plane, topo)
    out = []
    for kind in KINDS:
        want = int(counts.get(kind, 0))
        if want == 0:
            continue
        pos, neg = pools[kind]
        if want > len(pos) + len(neg):
            raise InsufficientCandidates(kind, want, len(pos) + len(neg))
        n_pos = int(rng.binomial(want, rates[kind]))
        n_pos = min(max(n_pos, want - len(neg)), len(pos))
        n_neg = want - n_pos
        for pool, n in ((pos, n_pos), (neg, n_neg)):
            if n:
                picks = rng.choice(len(pool), size=n, replace=False)
                out.extend(pool[i] for i in sorted(picks))
    return Specification(out)


def path_spec(plane: ForwardingPlane, topo: Topology, count: int, rng_seed) -> Specification:
    """Positive ``fwd`` facts along whole forwarding paths.

    Paths from random (router, destination) pairs are added hop by hop until
    ``count`` distinct facts are collected.
    """
    nh = plane.next_hop
    starts = [(r, d) for d in plane.destinations()
              for r in sorted_nodes(topo.internal_routers) if (r, d) in nh]
    if len(starts) < count:
        raise InsufficientCandidates(FWD, count, len(starts))
    rng = np.random.default_rng(rng_seed)
    out = {}
    for i in rng.permutation(len(starts)):
        r, d = starts[i]
        while (r, d) in nh and r in topo.internal_routers and len(out) < count:
            sf = SpecFact(FWD, (r, d, nh[(r, d)]), True)
            if sf in out:
                break
            out[sf] = None
            r = nh[(r, d)]
        if len(out) == count:
            break
    return Specification(out)
