"""Turning model distributions into complete configurations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NetSynthError, NoHoles, SimulationFailed
from .factbase import FactBase, holes, substitute
from .netsim import config_from_facts, simulate
from .specification import consistency, spec_from_facts


@dataclass
class SampledConfig:
    assignment: dict           # HoleRef -> int
    consistency: float
    shots: int
    sample_index: int
    failures: list = field(default_factory=list)   # SimulationFailed of skipped samples
    scores: list = field(default_factory=list)     # consistency of every sample drawn

    def completed(self, fb: FactBase) -> FactBase:
        return substitute(fb, self.assignment)


def score_assignment(fb: FactBase, assignment, sample_index=0, strict=False) -> float:
    """Consistency of the completed fact base with its own requirements.

    A configuration that cannot be simulated scores 0, or raises
    :class:`SimulationFailed` when ``strict``.
    """
    spec = spec_from_facts(fb)
    try:
        topo, cfg = config_from_facts(substitute(fb, assignment))
        return consistency(simulate(topo, cfg), spec)
    except NetSynthError as exc:
        if strict:
            raise SimulationFailed(sample_index, exc) from exc
        return 0.0


def partition(refs, k_shots, rng):
    """Seeded shuffle, then round-robin into ``min(k, |refs|)`` groups."""
    k = max(1, min(int(k_shots), len(refs)))
    order = rng.permutation(len(refs))
    groups = [[] for _ in range(k)]
    for i, j in enumerate(order):
        groups[i % k].append(refs[j])
    return groups


def _draw(p, rng, greedy):
    if greedy:
        return int(np.argmax(p))
    return int(rng.choice(len(p), p=p / p.sum()))


def multi_shot(model, fb: FactBase, k_shots: int, rng_seed, greedy=False) -> dict:
    """Assign holes group by group, re-running the model after each group."""
    if k_shots < 1:
        raise ValueError("k_shots must be at least 1")
    refs = holes(fb)
    if not refs:
        raise NoHoles("nothing to sample")
    rng = np.random.default_rng(rng_seed)
    groups = partition(refs, k_shots, rng)
    current = fb
    assignment = {}
    for g in groups:
        # hole positions are stable under substitution, so refs stay valid
        probs = model.forward(current, noise_seed=int(rng.integers(2**63)))
        chosen = {r: _draw(probs[r], rng, greedy) for r in g}
        assignment.update(chosen)
        current = substitute(current, chosen)
    return assignment


def best_of(model, fb: FactBase, samples: int, k_shots: int, seed) -> SampledConfig:
    """Best of ``samples`` independent multi-shot draws; stops at consistency 1."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    best = None
    failures, scores = [], []
    for i in range(samples):
        assignment = multi_shot(model, fb, k_shots, [seed, i])
        try:
            score = score_assignment(fb, assignment, i, strict=True)
        except SimulationFailed as exc:
            failures.append(exc)
            score = 0.0
        scores.append(score)
        if best is None or score > best.consistency:
            best = SampledConfig(assignment, score, k_shots, i)
        if score == 1.0:
            break
    best.failures, best.scores = failures, scores
    return best


def random_assignment(fb: FactBase, rng) -> dict:
    return {r: int(rng.integers(0, fb.value_count)) for r in holes(fb)}


def random_baseline(fb: FactBase, seed, samples: int = 1) -> SampledConfig:
    """Uniform values per hole, scored like :func:`best_of`."""
    refs = holes(fb)
    if not refs:
        raise NoHoles("nothing to sample")
    best = None
    failures, scores = [], []
    for i in range(samples):
        assignment = random_assignment(fb, np.random.default_rng([seed, i]))
        try:
            score = score_assignment(fb, assignment, i, strict=True)
        except SimulationFailed as exc:
            failures.append(exc)
            score = 0.0
        scores.append(score)
        if best is None or score > best.consistency:
            best = SampledConfig(assignment, score, 0, i)
        if score == 1.0:
            break
    best.failures, best.scores = failures, scores
    return best
