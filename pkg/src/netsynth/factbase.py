"""Ground Datalog-like fact bases.

A fact base is the single exchange format for topologies, configurations and
forwarding specifications. Arguments are constants (``str``), integer literals
(``int`` in ``[0, N)``) or the hole marker :data:`HOLE` written ``?``.

Text format, one fact per line::

    # comment
    router(A)
    connected(A,C,?)
    not fwd(B,N1,A)
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Union

from .errors import (ArityMismatch, ConflictingFact, FactSyntaxError,
                     InvalidHoleRef, ValueOutOfRange)

DEFAULT_VALUE_COUNT = 64


class _Hole:
    __slots__ = ()
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "?"

    def __reduce__(self):
        return (_Hole, ())


HOLE = _Hole()

Term = Union[str, int, _Hole]

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_FACT_RE = re.compile(rf"^(?:(not)\s+)?({_IDENT})\s*\((.*)\)$")
_IDENT_RE = re.compile(rf"^{_IDENT}$")
_INT_RE = re.compile(r"^[0-9]+$")


def is_constant(term):
    return isinstance(term, str)


def is_int(term):
    return isinstance(term, int) and not isinstance(term, bool)


@dataclass(frozen=True)
class Fact:
    predicate: str
    args: tuple
    truth: bool = True

    @property
    def key(self):
        return (self.predicate, self.args)

    def has_hole(self):
        return any(a is HOLE for a in self.args)

    def __str__(self):
        body = f"{self.predicate}({','.join(_term_text(a) for a in self.args)})"
        return body if self.truth else f"not {body}"


class HoleRef(NamedTuple):
    fact_index: int
    arg_index: int


def _term_text(term):
    if term is HOLE:
        return "?"
    return str(term)


class FactBase:
    """Immutable ordered set of facts.

    Identical duplicate facts collapse to their first occurrence; two facts
    with the same predicate and arguments but different truth values are
    rejected.
    """

    __slots__ = ("facts", "value_count", "arities", "_index")

    def __init__(self, facts: Iterable[Fact] = (), value_count: int = DEFAULT_VALUE_COUNT,
                 dedup: bool = True):
        self.value_count = value_count
        kept = []
        arities = {}
        index = {}
        for lineno, fact in enumerate(facts, start=1):
            arity = arities.setdefault(fact.predicate, len(fact.args))
            if arity != len(fact.args):
                raise ArityMismatch(fact.predicate, lineno, arity, len(fact.args))
            for a in fact.args:
                if is_int(a) and not 0 <= a < value_count:
                    raise ValueOutOfRange(lineno, a, value_count)
            if fact.has_hole():
                # holes are distinct unknowns; never merged or indexed
                kept.append(fact)
                continue
            seen = index.get(fact.key)
            if seen is not None:
                if seen != fact.truth:
                    raise ConflictingFact(lineno, fact)
                if dedup:
                    continue
            index[fact.key] = fact.truth
            kept.append(fact)
        self.facts = tuple(kept)
        self.arities = arities
        self._index = index

    @property
    def max_arity(self):
        return max(self.arities.values(), default=0)

    def __len__(self):
        return len(self.facts)

    def __iter__(self):
        return iter(self.facts)

    def __getitem__(self, i):
        return self.facts[i]

    def __eq__(self, other):
        if not isinstance(other, FactBase):
            return NotImplemented
        return self.facts == other.facts and self.value_count == other.value_count

    def __hash__(self):
        return hash((self.facts, self.value_count))

    def __repr__(self):
        return f"FactBase({len(self.facts)} facts, N={self.value_count})"

    def with_facts(self, facts):
        return FactBase(facts, self.value_count)

    def by_predicate(self, predicate):
        return [f for f in self.facts if f.predicate == predicate]


def parse(text: str, value_count: int = DEFAULT_VALUE_COUNT) -> FactBase:
    facts = []
    arities = {}
    linenos = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _FACT_RE.match(line)
        if m is None:
            raise FactSyntaxError(lineno)
        negated, predicate, body = m.groups()
        args = tuple(_parse_term(t.strip(), lineno, value_count) for t in body.split(","))
        arity = arities.setdefault(predicate, len(args))
        if arity != len(args):
            raise ArityMismatch(predicate, lineno, arity, len(args))
        facts.append(Fact(predicate, args, negated is None))
        linenos.append(lineno)
    try:
        return FactBase(facts, value_count)
    except ConflictingFact as exc:
        # report the source line rather than the fact's position
        raise ConflictingFact(linenos[exc.line - 1], facts[exc.line - 1]) from None


def _parse_term(token, lineno, value_count):
    if token == "?":
        return HOLE
    if _INT_RE.match(token):
        value = int(token)
        if value >= value_count:
            raise ValueOutOfRange(lineno, value, value_count)
        return value
    if _IDENT_RE.match(token):
        return token
    raise FactSyntaxError(lineno, f"bad term {token!r}")


def serialize(fb: FactBase) -> str:
    if not fb.facts:
        return ""
    return "\n".join(str(f) for f in fb.facts) + "\n"


def truth_of(fb: FactBase, predicate: str, args) -> bool | None:
    """Stored truth value of a ground fact, or ``None`` when absent."""
    return fb._index.get((predicate, tuple(args)))


def holes(fb: FactBase) -> list[HoleRef]:
    return [HoleRef(i, j)
            for i, f in enumerate(fb.facts)
            for j, a in enumerate(f.args) if a is HOLE]


def substitute(fb: FactBase, assignment: Mapping[HoleRef, int]) -> FactBase:
    if not assignment:
        return fb
    per_fact = {}
    for ref, value in assignment.items():
        i, j = ref
        if not (0 <= i < len(fb.facts)) or not (0 <= j < len(fb.facts[i].args)):
            raise InvalidHoleRef(f"no argument at {tuple(ref)}")
        if fb.facts[i].args[j] is not HOLE:
            raise InvalidHoleRef(f"argument at {tuple(ref)} is not a hole")
        value = int(value)
        if not 0 <= value < fb.value_count:
            raise ValueOutOfRange(None, value, fb.value_count)
        per_fact.setdefault(i, {})[j] = value
    facts = list(fb.facts)
    for i, repl in per_fact.items():
        f = facts[i]
        args = tuple(repl.get(j, a) for j, a in enumerate(f.args))
        facts[i] = Fact(f.predicate, args, f.truth)
    # positions must survive substitution, so filled facts are never merged
    return FactBase(facts, fb.value_count, dedup=False)
