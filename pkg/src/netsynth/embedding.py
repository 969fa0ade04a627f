"""Fact base -> attributed graph.

Every constant and every non-unary fact becomes a node. A constant's feature
is the sum of the type vectors of the unary facts naming it. A fact's feature
is its type vector plus a truth-value row plus one value row per integer
argument (the hole vector where the value is unknown). Edges link a fact to
the constant at argument position ``i`` in both directions, one edge set per
position.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import InvalidHoleRef, UnknownPredicate, ValueOutOfRange
from .factbase import HOLE, FactBase, HoleRef, is_constant, is_int
from .nncore import DTYPE, EdgeIndex, Parameter, gather_sum


class PredicateSpec(NamedTuple):
    arity: int
    int_positions: tuple


DEFAULT_SCHEMA = {
    "router": PredicateSpec(1, ()),
    "route_reflector": PredicateSpec(1, ()),
    "external": PredicateSpec(1, ()),
    "network": PredicateSpec(1, ()),
    "connected": PredicateSpec(3, (2,)),
    "ibgp": PredicateSpec(2, ()),
    "ebgp": PredicateSpec(2, ()),
    "bgp_route": PredicateSpec(8, (2, 3, 4, 5, 6, 7)),
    "fwd": PredicateSpec(3, ()),
    "reachable": PredicateSpec(3, ()),
    "trafficIsolation": PredicateSpec(4, ()),
}


def schema_to_json(schema):
    return {p: [s.arity, list(s.int_positions)] for p, s in sorted(schema.items())}


def schema_from_json(d):
    return {p: PredicateSpec(int(a), tuple(int(i) for i in pos)) for p, (a, pos) in d.items()}


class EmbeddingTables:
    """Learned lookup tables, stacked into one row space for fast gathering."""

    def __init__(self, schema, d, n, rng):
        self.schema = dict(schema)
        self.d, self.n = d, n
        self.params = {}
        self.rows = {}            # table key -> first row in the stacked space
        order = []
        for pred in sorted(self.schema):
            order.append((f"emb.V.{pred}", ("V", pred), (d,)))
        order.append(("emb.W_bool", ("bool",), (2, d)))
        order.append(("emb.V_hole", ("hole",), (d,)))
        for pred in sorted(self.schema):
            for pos in self.schema[pred].int_positions:
                order.append((f"emb.W.{pred}.{pos}", ("W", pred, pos), (n, d)))
        offset = 0
        for name, key, shape in order:
            self.params[key] = Parameter(name, rng.normal(size=shape))
            self.rows[key] = offset
            offset += shape[0] if len(shape) == 2 else 1
        self.total_rows = offset
        self.ordered = [self.params[k] for _, k, _ in order]

    def parameters(self):
        return list(self.ordered)

    def lookup(self, matrix):
        return gather_sum(matrix, self.ordered)


@dataclass
class GraphStructure:
    """Parameter-free part of an encoding; reusable across training steps."""

    n_nodes: int
    constants: list            # constant names, node ids 0..len-1
    fact_node: list            # per fact index: node id, or None for unary facts
    lookup: sp.csr_matrix      # n_nodes x total_rows incidence into the tables
    neighborhoods: list        # EdgeIndex per argument position
    holes: dict                # HoleRef -> (node, predicate, position)
    max_arity: int

    def hole_list(self):
        return list(self.holes.items())


@dataclass
class GraphEncoding:
    structure: GraphStructure
    features: object           # Tensor, n_nodes x D

    @property
    def neighborhoods(self):
        return self.structure.neighborhoods


def build_structure(fb: FactBase, tables: EmbeddingTables) -> GraphStructure:
    schema = tables.schema
    const_ids = {}
    for f in fb.facts:
        spec = schema.get(f.predicate)
        if spec is None:
            raise UnknownPredicate(f"no tables for predicate {f.predicate!r}")
        if spec.arity != len(f.args):
            raise UnknownPredicate(f"{f.predicate} has arity {spec.arity}, fact has {len(f.args)}")
        for a in f.args:
            if is_constant(a) and a not in const_ids:
                const_ids[a] = len(const_ids)

    rows, cols = [], []
    fact_node = []
    next_node = len(const_ids)
    max_arity = max((schema[p].arity for p in {f.predicate for f in fb.facts}), default=0)
    edges = [([], []) for _ in range(max_arity)]
    holes = {}
    r0 = tables.rows
    for fi, f in enumerate(fb.facts):
        spec = schema[f.predicate]
        if spec.arity == 1 and is_constant(f.args[0]):
            if f.truth:
                rows.append(const_ids[f.args[0]])
                cols.append(r0[("V", f.predicate)])
            fact_node.append(None)
            continue
        node = next_node
        next_node += 1
        fact_node.append(node)
        rows += [node, node]
        cols += [r0[("V", f.predicate)], r0[("bool",)] + int(f.truth)]
        for pos, a in enumerate(f.args):
            if pos in spec.int_positions:
                if a is HOLE:
                    rows.append(node)
                    cols.append(r0[("hole",)])
                    holes[HoleRef(fi, pos)] = (node, f.predicate, pos)
                elif is_int(a):
                    if not 0 <= a < tables.n:
                        raise ValueOutOfRange(fi + 1, a, tables.n)
                    rows.append(node)
                    cols.append(r0[("W", f.predicate, pos)] + a)
                else:
                    raise UnknownPredicate(f"{f.predicate} expects an integer at position {pos}")
            elif is_constant(a):
                c = const_ids[a]
                edges[pos][0].extend((node, c))
                edges[pos][1].extend((c, node))
            else:
                raise UnknownPredicate(f"{f.predicate} expects a constant at position {pos}")
    n_nodes = next_node
    lookup = sp.csr_matrix((np.ones(len(rows), dtype=DTYPE), (rows, cols)),
                           shape=(n_nodes, tables.total_rows))
    hoods = [EdgeIndex(n_nodes, s, d) for s, d in edges]
    return GraphStructure(n_nodes, list(const_ids), fact_node, lookup, hoods, holes, max_arity)


def batch_structures(structs) -> GraphStructure:
    """Disjoint union; hole keys become ``(graph index, HoleRef)``."""
    if len(structs) == 1:
        s = structs[0]
        return GraphStructure(s.n_nodes, s.constants, s.fact_node, s.lookup, s.neighborhoods,
                              {(0, r): v for r, v in s.holes.items()}, s.max_arity)
    max_arity = max(s.max_arity for s in structs)
    offsets = np.cumsum([0] + [s.n_nodes for s in structs])
    n = int(offsets[-1])
    lookup = sp.vstack([s.lookup for s in structs], format="csr")
    hoods = []
    for i in range(max_arity):
        src = [s.neighborhoods[i].src + o for s, o in zip(structs, offsets) if i < s.max_arity]
        dst = [s.neighborhoods[i].dst + o for s, o in zip(structs, offsets) if i < s.max_arity]
        hoods.append(EdgeIndex(n, np.concatenate(src) if src else [],
                               np.concatenate(dst) if dst else []))
    holes = {}
    for g, (s, o) in enumerate(zip(structs, offsets)):
        for r, (node, pred, pos) in s.holes.items():
            holes[(g, r)] = (node + int(o), pred, pos)
    return GraphStructure(n, [], [], lookup, hoods, holes, max_arity)


def embed(fb: FactBase, tables: EmbeddingTables) -> GraphEncoding:
    s = build_structure(fb, tables)
    return GraphEncoding(s, tables.lookup(s.lookup))


def hole_node_index(ge, hr: HoleRef) -> int:
    s = ge.structure if isinstance(ge, GraphEncoding) else ge
    try:
        return s.holes[HoleRef(*hr)][0]
    except KeyError:
        raise InvalidHoleRef(f"{tuple(hr)} is not a hole of this fact base") from None


def dump(ge: GraphEncoding, width: int = 4) -> str:
    """Plain-text view: node features truncated to ``width`` columns, then edges."""
    s = ge.structure
    names = {i: c for i, c in enumerate(s.constants)}
    for fi, node in enumerate(s.fact_node):
        if node is not None:
            names[node] = f"fact#{fi}"
    lines = []
    feats = ge.features.data
    for i in range(s.n_nodes):
        vals = " ".join(f"{v:+.3f}" for v in feats[i, :width])
        lines.append(f"node {i} {names.get(i, '?')}: {vals}")
    for pos, hood in enumerate(s.neighborhoods):
        pairs = " ".join(f"{a}>{b}" for a, b in zip(hood.src, hood.dst))
        lines.append(f"N{pos}: {pairs}")
    return "\n".join(lines) + "\n"
