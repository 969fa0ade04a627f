"""Task suites, evaluation reports and unsatisfiable task construction."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .datagen import MAX_ATTEMPTS, GenOptions, Sample, gen_config, gen_sample, gen_topology, mask_facts
from .errors import GenerationFailed, InsufficientCandidates, NetSynthError, NoConvergence
from .factbase import FactBase, substitute
from .netsim import config_from_facts, facts_from_config, simulate
from .sampler import best_of, random_baseline
from .specification import (FWD, KINDS, SpecFact, Specification, path_spec,
                            per_predicate_breakdown, spec_from_facts, spec_to_facts)

SUITE_SIZES = (2, 8, 16)


@dataclass
class EvalRow:
    task_id: int
    spec_size: int
    consistency: float
    breakdown: dict
    full_match: bool
    over_90: bool
    samples_used: int
    seconds: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    label: str = ""

    def scores(self):
        return np.array([r.consistency for r in self.rows], dtype=float)

    def aggregate(self):
        s = self.scores()
        return {
            "tasks": len(self.rows),
            "mean": float(s.mean()) if len(s) else 0.0,
            "std": float(s.std()) if len(s) else 0.0,
            "full_matches": int(sum(r.full_match for r in self.rows)),
            "over_90": int(sum(r.over_90 for r in self.rows)),
        }

    def to_text(self):
        lines = ["task\tspec\tconsistency\tfull\t>90%\tsamples\tseconds\tbreakdown"]
        for r in self.rows:
            bd = ",".join(f"{k}={v:.3f}" for k, v in r.breakdown.items())
            lines.append(f"{r.task_id}\t{r.spec_size}\t{r.consistency:.4f}\t{int(r.full_match)}"
                         f"\t{int(r.over_90)}\t{r.samples_used}\t{r.seconds:.3f}\t{bd}")
        a = self.aggregate()
        lines.append(f"# {self.label} mean {a['mean']:.4f} +- {a['std']:.4f} "
                     f"full {a['full_matches']}/{a['tasks']} >90% {a['over_90']}/{a['tasks']}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({"label": self.label, "rows": [asdict(r) for r in self.rows],
                           "aggregate": self.aggregate()}, indent=1, sort_keys=True)


def make_tasks(seed, count: int, requirements: int, options: GenOptions = GenOptions()):
    """``count`` tasks with ``requirements`` facts of every kind."""
    opts = replace(options, spec_counts={k: requirements for k in KINDS},
                   ospf_only_fraction=0.0, path_fraction=0.0)
    return [gen_sample(int(s), opts) for s in np.random.default_rng(seed).integers(2**31, size=count)]


def _row(task_id, fb, result, seconds):
    spec = spec_from_facts(fb)
    try:
        topo, cfg = config_from_facts(substitute(fb, result.assignment))
        breakdown = per_predicate_breakdown(simulate(topo, cfg), spec)
    except NetSynthError:
        breakdown = {}
    c = result.consistency
    return EvalRow(task_id, len(spec), c, breakdown, c == 1.0, c > 0.9,
                   len(result.scores), seconds)


def evaluate(model, tasks, samples=5, shots=4, seed=0, label="") -> EvalReport:
    """Best-of-``samples`` synthesis per task; ``model=None`` samples uniformly."""
    report = EvalReport(label=label)
    for i, t in enumerate(tasks):
        fb = t.input if isinstance(t, Sample) else t
        start = time.perf_counter()
        if model is None:
            res = random_baseline(fb, [seed, i], samples=samples)
        else:
            res = best_of(model, fb, samples, shots, [seed, i])
        report.rows.append(_row(i, fb, res, time.perf_counter() - start))
    return report


def run_suite(model, seed, count, options: GenOptions = GenOptions(), sizes=SUITE_SIZES,
              samples=5, shots=4):
    """Reports for the 3x2 / 3x8 / 3x16 requirement bands."""
    out = {}
    for req in sizes:
        tasks = make_tasks([seed, req], count, req, options)
        out[req] = evaluate(model, tasks, samples, shots, seed, label=f"3x{req}")
    return out


# -- unsatisfiable tasks ---------------------------------------------------------

def unsat_task(seed, n_conflicts: int, options: GenOptions = GenOptions(),
               requirements: int = 16) -> Sample:
    """OSPF-only path task where ``n_conflicts`` requirements come from other weights.

    Every spliced fact names a (router, destination) pair that a kept fact
    routes to a different next hop, so at most one of each pair can hold.
    Targets are the original weights: they satisfy every kept fact.
    """
    if not 0 <= 2 * n_conflicts <= requirements:
        raise ValueError("need 0 <= 2 * n_conflicts <= requirements")
    last = None
    for attempt in range(MAX_ATTEMPTS):
        meta = np.random.default_rng([int(seed), attempt, 0])
        n = int(meta.integers(options.routers_min, options.routers_max + 1))
        try:
            topo = gen_topology([seed, attempt, 1], n, options)
            topo, cfg = gen_config([seed, attempt, 2], topo, options)
            plane = simulate(topo, cfg)
            base = list(path_spec(plane, topo, requirements, [seed, attempt, 3]))
            spec = _splice(base, topo, cfg, options, n_conflicts, [seed, attempt, 4])
        except (NoConvergence, InsufficientCandidates) as exc:
            last = exc
            continue
        facts = facts_from_config(topo, cfg) + spec_to_facts(spec)
        masked, targets = mask_facts(facts, "ospf")
        return Sample(FactBase(masked, options.value_count), targets, int(seed))
    raise GenerationFailed(seed, last)


def _splice(base, topo, cfg, options, n_conflicts, rng_seed):
    if n_conflicts == 0:
        return Specification(base)
    rng = np.random.default_rng(rng_seed)
    hop = {sf.args[:2]: sf.args[2] for sf in base}
    links = sorted(topo.links, key=lambda l: (l.a, l.b))
    w_hi = options.weight_max if options.weight_max is not None else options.value_count - 1
    for _ in range(MAX_ATTEMPTS):
        w = rng.integers(options.weight_min, w_hi + 1, size=len(links))
        alt = simulate(topo.with_weights({(l.a, l.b): int(x) for l, x in zip(links, w)}), cfg)
        conflicts = sorted(e for e in alt.edges if e[:2] in hop and hop[e[:2]] != e[2])
        if len(conflicts) < n_conflicts:
            continue
        picks = [conflicts[i] for i in sorted(rng.choice(len(conflicts), n_conflicts, replace=False))]
        keys = {e[:2] for e in picks}
        # drop kept facts that do not take part in a conflict to keep the size fixed
        droppable = [i for i, sf in enumerate(base) if sf.args[:2] not in keys]
        if len(droppable) < n_conflicts:
            continue
        drop = set(int(droppable[i]) for i in rng.choice(len(droppable), n_conflicts, replace=False))
        kept = [sf for i, sf in enumerate(base) if i not in drop]
        return Specification(kept + [SpecFact(FWD, e, True) for e in picks])
    raise InsufficientCandidates("conflict", n_conflicts, 0)


def conflict_pairs(spec: Specification):
    """Positive fwd facts that disagree on the next hop of one (router, destination)."""
    seen = {}
    pairs = []
    for sf in spec:
        if sf.kind != FWD or not sf.truth:
            continue
        key = sf.args[:2]
        for other in seen.get(key, ()):
            if other.args[2] != sf.args[2]:
                pairs.append((other, sf))
        seen.setdefault(key, []).append(sf)
    return pairs


def unsat_eval(model, tasks, samples=5, shots=4, seed=0, label="unsat") -> EvalReport:
    return evaluate(model, tasks, samples, shots, seed, label)
