"""Random (masked fact base, target parameters) pairs.

Every sample is generated from its own seed: topology, configuration,
simulation, requirement extraction, then masking of the parameters the model
has to recover. Datasets are directories of human-readable records.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import (GenerationFailed, InsufficientCandidates, NetSynthError,
                     NoConvergence)
from .factbase import (DEFAULT_VALUE_COUNT, HOLE, Fact, FactBase, HoleRef,
                       parse, serialize, substitute)
from .netsim import (BgpConfig, Link, RouteSeed, Topology, config_from_facts,
                     facts_from_config, node_key, simulate, sorted_nodes)
from .specification import (DEFAULT_POSITIVE_RATE, KINDS, consistency,
                            extract_spec, path_spec, spec_from_facts, spec_to_facts)

MAX_ATTEMPTS = 16
FORMAT_VERSION = 1

# masked argument positions (0-based) per predicate
MASKS = {
    "full": {"connected": (2,), "bgp_route": (2, 3, 5)},
    "ospf": {"connected": (2,)},
}


@dataclass(frozen=True)
class GenOptions:
    routers_min: int = 16
    routers_max: int = 24
    externals_min: int = 4
    externals_max: int = 8
    dests_min: int = 2
    dests_max: int = 4
    announcers_max: int = 3
    weight_min: int = 1
    weight_max: int | None = None          # inclusive; None means N - 1
    attr_max: int | None = None            # bound for local pref, path length, MED
    value_count: int = DEFAULT_VALUE_COUNT
    # requirements per kind: fixed count, or [lo, hi] drawn per sample
    spec_counts: dict = field(default_factory=lambda: {k: (8, 24) for k in KINDS})
    positive_rate: dict = field(default_factory=lambda: dict(DEFAULT_POSITIVE_RATE))
    mask: str = "full"
    # share of samples masked in OSPF-only mode when mask == "full"
    ospf_only_fraction: float = 0.0
    # share of samples that are OSPF-only with positive path requirements
    path_fraction: float = 0.0
    path_requirements: int = 16

    def to_json(self):
        d = asdict(self)
        d["spec_counts"] = {k: list(v) if isinstance(v, (tuple, list)) else v
                            for k, v in self.spec_counts.items()}
        return d

    @staticmethod
    def from_json(d):
        d = dict(d)
        d["spec_counts"] = {k: tuple(v) if isinstance(v, list) else v
                            for k, v in d.get("spec_counts", {}).items()}
        return GenOptions(**d)


@dataclass(frozen=True)
class Sample:
    input: FactBase
    targets: dict          # HoleRef -> int
    seed: int

    def complete(self) -> FactBase:
        return substitute(self.input, self.targets)


def _rng(*key):
    return np.random.default_rng([int(k) for k in key])


def _triangulate(points, rng):
    for _ in range(8):
        try:
            tri = Delaunay(points)
            break
        except QhullError:
            points = points + rng.normal(scale=1e-9, size=points.shape)
    else:
        raise GenerationFailed(None, "degenerate point set")
    edges = set()
    for simplex in tri.simplices:
        for i in range(3):
            a, b = sorted((int(simplex[i]), int(simplex[(i + 1) % 3])))
            edges.add((a, b))
    return sorted(edges)


def gen_topology(seed, n_routers: int, options: GenOptions = GenOptions()) -> Topology:
    """Delaunay triangulation of uniform points plus attached external peers.

    Links carry placeholder weight 1; :func:`gen_config` assigns real ones.
    Routers are named ``c0..``, then destinations, then external peers.
    """
    if n_routers < 3:
        raise ValueError("need at least 3 routers")
    rng = np.random.default_rng(seed)
    points = rng.uniform(size=(n_routers, 2))
    pairs = _triangulate(points, rng)
    routers = [f"c{i}" for i in range(n_routers)]
    n_dest = int(rng.integers(options.dests_min, options.dests_max + 1))
    n_ext = int(rng.integers(options.externals_min, options.externals_max + 1))
    dests = [f"c{n_routers + i}" for i in range(n_dest)]
    externals = [f"c{n_routers + n_dest + i}" for i in range(n_ext)]
    attach = rng.integers(0, n_routers, size=n_ext)
    return Topology(
        frozenset(routers), frozenset(externals),
        frozenset(Link.make(routers[a], routers[b], 1) for a, b in pairs),
        frozenset((routers[int(r)], e) for r, e in zip(attach, externals)),
        frozenset(dests))


def _peer_id(name):
    return int(name.lstrip("c"))


def gen_config(seed, topo: Topology, options: GenOptions = GenOptions()):
    """Random weights, iBGP layout and announcements; returns (topology, config)."""
    rng = np.random.default_rng(seed)
    n_values = options.value_count
    w_hi = options.weight_max if options.weight_max is not None else n_values - 1
    links = sorted(topo.links, key=lambda l: (node_key(l.a), node_key(l.b)))
    w = rng.integers(options.weight_min, w_hi + 1, size=len(links))
    topo = topo.with_weights({(l.a, l.b): int(x) for l, x in zip(links, w)})

    routers = sorted_nodes(topo.internal_routers)
    if rng.random() < 0.5:
        reflectors = frozenset()
        sessions = {frozenset((a, b)) for i, a in enumerate(routers) for b in routers[i + 1:]}
    else:
        k = min(int(rng.integers(1, 3)), len(routers))
        reflectors = frozenset(routers[int(i)] for i in rng.choice(len(routers), size=k, replace=False))
        sessions = {frozenset((r, c)) for r in reflectors for c in routers if c != r}

    externals = sorted_nodes(topo.external_peers)
    imports = []
    for dest in sorted_nodes(topo.destinations):
        m = int(rng.integers(1, min(options.announcers_max, len(externals)) + 1))
        for i in sorted(rng.choice(len(externals), size=m, replace=False)):
            peer = externals[int(i)]
            a_hi = options.attr_max + 1 if options.attr_max is not None else n_values
            lp, aspath, med = (int(x) for x in rng.integers(0, a_hi, size=3))
            origin = int(rng.integers(0, 3))
            imports.append(RouteSeed(peer, dest, lp, aspath, origin, med, 1, _peer_id(peer)))
    cfg = BgpConfig(frozenset(sessions), frozenset(topo.peer_links), reflectors, tuple(imports))
    return topo, cfg


def mask_facts(facts, mask):
    """Replace masked arguments by holes; returns (facts, targets)."""
    positions = MASKS[mask]
    out, targets = [], {}
    for i, f in enumerate(facts):
        pos = positions.get(f.predicate, ())
        if pos:
            args = list(f.args)
            for j in pos:
                targets[HoleRef(i, j)] = args[j]
                args[j] = HOLE
            f = Fact(f.predicate, tuple(args), f.truth)
        out.append(f)
    return out, targets


def _draw_counts(rng, spec_counts):
    out = {}
    for k in KINDS:
        c = spec_counts.get(k, 0)
        out[k] = int(rng.integers(c[0], c[1] + 1)) if isinstance(c, (tuple, list)) else int(c)
    return out


def gen_sample(seed: int, options: GenOptions = GenOptions()) -> Sample:
    last = None
    for attempt in range(MAX_ATTEMPTS):
        meta = _rng(seed, attempt, 0)
        n = int(meta.integers(options.routers_min, options.routers_max + 1))
        counts = _draw_counts(meta, options.spec_counts)
        mask = options.mask
        if mask == "full" and meta.random() < options.ospf_only_fraction:
            mask = "ospf"
        paths = meta.random() < options.path_fraction
        if paths:
            mask = "ospf"
        try:
            topo = gen_topology([seed, attempt, 1], n, options)
            topo, cfg = gen_config([seed, attempt, 2], topo, options)
            plane = simulate(topo, cfg)
            if paths:
                spec = path_spec(plane, topo, options.path_requirements, [seed, attempt, 3])
            else:
                spec = extract_spec(plane, topo, counts, [seed, attempt, 3], options.positive_rate)
        except (NoConvergence, InsufficientCandidates) as exc:
            last = exc
            continue
        facts = facts_from_config(topo, cfg) + spec_to_facts(spec)
        masked, targets = mask_facts(facts, mask)
        return Sample(FactBase(masked, options.value_count), targets, seed)
    raise GenerationFailed(seed, last)


def check_sample(sample: Sample) -> float:
    """Consistency of a sample's own requirements under its ground truth."""
    topo, cfg = config_from_facts(sample.complete())
    return consistency(simulate(topo, cfg), spec_from_facts(sample.input))


# -- dataset directory -------------------------------------------------------

def targets_text(targets) -> str:
    return "".join(f"{r.fact_index} {r.arg_index} {v}\n" for r, v in sorted(targets.items()))


def parse_targets(text) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip():
            i, j, v = (int(x) for x in line.split())
            out[HoleRef(i, j)] = v
    return out


def _write_sample(args):
    seed, options, root = args
    s = gen_sample(seed, options)
    (root / f"{seed}.facts").write_text(serialize(s.input))
    (root / f"{seed}.targets").write_text(targets_text(s.targets))
    return seed


def gen_dataset(out_dir, count: int, base_seed: int = 0,
                options: GenOptions = GenOptions(), workers: int = 1) -> Path:
    if count < 1:
        raise ValueError("count must be at least 1")
    out = Path(out_dir)
    samples = out / "samples"
    samples.mkdir(parents=True, exist_ok=True)
    seeds = range(base_seed, base_seed + count)
    jobs = [(s, options, samples) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_write_sample, jobs, chunksize=max(1, count // (4 * workers))))
    else:
        for job in jobs:
            _write_sample(job)
    meta = {"format": FORMAT_VERSION, "count": count, "base_seed": base_seed,
            "value_count": options.value_count, "options": options.to_json()}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return out


def load_dataset(path) -> tuple[list[Sample], dict]:
    root = Path(path)
    try:
        meta = json.loads((root / "meta.json").read_text())
    except (OSError, ValueError) as exc:
        raise GenerationFailed(None, f"unreadable dataset metadata: {exc}") from None
    n = meta["value_count"]
    samples = []
    for seed in range(meta["base_seed"], meta["base_seed"] + meta["count"]):
        try:
            fb = parse((root / "samples" / f"{seed}.facts").read_text(), n)
            targets = parse_targets((root / "samples" / f"{seed}.targets").read_text())
        except (OSError, ValueError, NetSynthError) as exc:
            raise GenerationFailed(seed, f"corrupt record: {exc}") from None
        samples.append(Sample(fb, targets, seed))
    return samples, meta


def default_workers():
    return max(1, (os.cpu_count() or 1))
