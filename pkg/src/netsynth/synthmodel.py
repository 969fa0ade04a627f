"""Encode-process-decode synthesizer over fact-base graphs.

Embedding -> 2 attention blocks (encoder) -> Gaussian noise on part of the
latent channels -> a 6-block processor applied 4 times with shared weights ->
one MLP decoder per (fact type, integer argument) giving a distribution over
the N supported values of each hole.
"""
from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nncore as nn
from .embedding import (DEFAULT_SCHEMA, EmbeddingTables, GraphStructure, batch_structures,
                        build_structure, schema_from_json, schema_to_json)
from .errors import CorruptCheckpoint, NetSynthError, NoHoles, VersionMismatch
from .factbase import FactBase, HoleRef

CHECKPOINT_VERSION = 1
ATTENTION_SLOPE = 0.2
HIDDEN_SLOPE = 0.01


@dataclass(frozen=True)
class ModelConfig:
    D: int = 64
    N: int = 64
    encoder_layers: int = 2
    processor_layers: int = 6
    iterations: int = 4
    dropout: float = 0.1
    noise: bool = True
    noise_channels: str = "half"     # "half" or "all"
    noise_std: float = 1.0
    ffn_mult: int = 4
    init_seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.noise_channels not in ("half", "all"):
            raise ValueError("noise_channels is 'half' or 'all'")
        if self.noise_channels == "half" and self.D % 2:
            raise ValueError("D must be even when noise covers half the channels")

    @property
    def noise_width(self):
        return self.D // 2 if self.noise_channels == "half" else self.D


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0
    time_budget: float | None = None     # seconds; stop after the epoch that crosses it


def _graph_of(key):
    # batched hole keys are (graph, HoleRef); a bare HoleRef belongs to graph 0
    return 0 if isinstance(key, HoleRef) else key[0]


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class SynthModel:
    def __init__(self, config: ModelConfig = ModelConfig(), schema=None):
        self.config = config
        self.schema = dict(schema or DEFAULT_SCHEMA)
        rng = np.random.default_rng(config.init_seed)
        d, n = config.D, config.N
        self.tables = EmbeddingTables(self.schema, d, n, rng)
        self.max_arity = max(s.arity for s in self.schema.values())
        self.params = {p.name: p for p in self.tables.parameters()}
        self.bn = {}
        self.encoder = [self._block(f"enc.{l}", rng) for l in range(config.encoder_layers)]
        self.processor = [self._block(f"proc.{l}", rng) for l in range(config.processor_layers)]
        self.decoders = {}
        for pred in sorted(self.schema):
            for pos in self.schema[pred].int_positions:
                pre = f"dec.{pred}.{pos}"
                h = config.ffn_mult * d
                self.decoders[(pred, pos)] = (
                    self._param(f"{pre}.lin1.W", _glorot(rng, d, h)),
                    self._param(f"{pre}.lin1.b", np.zeros(h)),
                    self._param(f"{pre}.lin2.W", _glorot(rng, h, n)),
                    self._param(f"{pre}.lin2.b", np.zeros(n)))
        self._structures = {}

    # -- construction -----------------------------------------------------------

    def _param(self, name, value):
        p = nn.Parameter(name, value)
        self.params[name] = p
        return p

    def _norm(self, name):
        d = self.config.D
        self.bn[name] = nn.BatchNormState(d)
        return (self._param(f"{name}.gamma", np.ones(d)), self._param(f"{name}.beta", np.zeros(d)),
                name)

    def _block(self, pre, rng):
        d = self.config.D
        h = self.config.ffn_mult * d
        gats = [(self._param(f"{pre}.gat{i}.W", _glorot(rng, d, d)),
                 self._param(f"{pre}.gat{i}.a_src", rng.normal(scale=0.1, size=d)),
                 self._param(f"{pre}.gat{i}.a_dst", rng.normal(scale=0.1, size=d)))
                for i in range(self.max_arity)]
        return {
            "gats": gats,
            "norm1": self._norm(f"{pre}.norm1"),
            "lin1": (self._param(f"{pre}.ffn.lin1.W", _glorot(rng, d, h)),
                     self._param(f"{pre}.ffn.lin1.b", np.zeros(h))),
            "lin2": (self._param(f"{pre}.ffn.lin2.W", _glorot(rng, h, d)),
                     self._param(f"{pre}.ffn.lin2.b", np.zeros(d))),
            "norm2": self._norm(f"{pre}.norm2"),
        }

    def parameters(self):
        return list(self.params.values())

    def parameter_count(self):
        return int(sum(p.data.size for p in self.params.values()))

    def manifest(self):
        return {"schema": schema_to_json(self.schema), "D": self.config.D, "N": self.config.N}

    # -- forward ----------------------------------------------------------------

    def structure(self, fb: FactBase, cache_key=None) -> GraphStructure:
        if cache_key is not None and cache_key in self._structures:
            return self._structures[cache_key]
        s = build_structure(fb, self.tables)
        if cache_key is not None:
            self._structures[cache_key] = s
        return s

    def _apply_norm(self, x, norm, train):
        gamma, beta, name = norm
        return nn.batch_norm(x, gamma, beta, self.bn[name], train)

    def gat_block(self, h, s: GraphStructure, block, train, rng):
        drop = self.config.dropout
        heads = [nn.gat_aggregate(h, w, a_src, a_dst, hood, ATTENTION_SLOPE)
                 for (w, a_src, a_dst), hood in zip(block["gats"], s.neighborhoods)
                 if len(hood)]
        z = nn.add(h, nn.dropout(nn.add_many(heads), drop, train, rng)) if heads else h
        x = self._apply_norm(z, block["norm1"], train)
        x = nn.leaky_rectifier(nn.linear(x, *block["lin1"]), HIDDEN_SLOPE)
        x = nn.linear(nn.dropout(x, drop, train, rng), *block["lin2"])
        return self._apply_norm(x, block["norm2"], train)

    def latent(self, s: GraphStructure, train=False, rng=None, noise=None):
        """Processor output for every node.

        ``noise`` is an explicit (n_nodes x noise_width) array, or None for
        no noise.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        h = self.tables.lookup(s.lookup)
        for block in self.encoder:
            h = self.gat_block(h, s, block, train, rng)
        if noise is not None:
            c = self.config
            if noise.shape != (s.n_nodes, c.noise_width):
                raise nn.ShapeMismatch(f"noise {noise.shape}, expected {(s.n_nodes, c.noise_width)}")
            pad = np.zeros((s.n_nodes, c.D))
            pad[:, :c.noise_width] = noise
            h = nn.add(h, nn.constant(pad))
        for _ in range(self.config.iterations):
            for block in self.processor:
                h = self.gat_block(h, s, block, train, rng)
        return h

    def draw_noise(self, n_nodes, rng):
        return rng.normal(scale=self.config.noise_std, size=(n_nodes, self.config.noise_width))

    def hole_logits(self, h, s: GraphStructure):
        """(keys, logits Tensor) per (predicate, position) group, in hole order."""
        groups = {}
        for key, (node, pred, pos) in s.holes.items():
            groups.setdefault((pred, pos), ([], []))
            groups[(pred, pos)][0].append(key)
            groups[(pred, pos)][1].append(node)
        out = []
        for dk in sorted(groups):
            keys, nodes = groups[dk]
            w1, b1, w2, b2 = self.decoders[dk]
            x = nn.take_rows(h, nodes)
            x = nn.leaky_rectifier(nn.linear(x, w1, b1), HIDDEN_SLOPE)
            out.append((keys, nn.linear(x, w2, b2)))
        return out

    def _noise_for(self, s, noise, noise_seed, rng=None):
        if noise is not None:
            return np.asarray(noise, dtype=float)
        if not self.config.noise:
            return None
        if rng is None:
            rng = np.random.default_rng(noise_seed if noise_seed is not None else 0)
        return self.draw_noise(s.n_nodes, rng)

    def forward(self, fb: FactBase, noise_seed=None, noise=None, structure=None) -> dict:
        """HoleRef -> probability vector of length N (eval mode)."""
        s = structure if structure is not None else self.structure(fb)
        if not s.holes:
            raise NoHoles("fact base has no holes to predict")
        h = self.latent(s, False, None, self._noise_for(s, noise, noise_seed))
        probs = {}
        for keys, logits in self.hole_logits(h, s):
            p = nn.softmax_array(logits.data)
            for k, row in zip(keys, p):
                probs[k] = row
        return {k: probs[k] for k in s.holes}

    def loss_on(self, s: GraphStructure, targets: dict, train, rng, noise=None):
        """Mean NLL over holes; hole keys of ``s`` index ``targets``.

        In a batched structure each graph contributes equally.
        """
        h = self.latent(s, train, rng, noise)
        per_graph = {}
        for key in s.holes:
            g = _graph_of(key)
            per_graph[g] = per_graph.get(g, 0) + 1
        scale = 1.0 / len(per_graph)
        parts = []
        for keys, logits in self.hole_logits(h, s):
            wt = np.array([scale / per_graph[_graph_of(k)] for k in keys])
            parts.append(nn.log_softmax_nll(logits, [targets[k] for k in keys], wt))
        return nn.add_many(parts)

    def loss(self, sample, noise_seed=None, train=False, rng=None):
        s = self.structure(sample.input)
        noise = self._noise_for(s, None, noise_seed)
        targets = {k: sample.targets[k] for k in s.holes}
        return self.loss_on(s, targets, train, rng if rng is not None else np.random.default_rng(0), noise)

    # -- state ----------------------------------------------------------------------

    def state_arrays(self):
        arrays = [(name, p.data) for name, p in self.params.items()]
        for name, st in self.bn.items():
            arrays.append((f"bn.{name}.mean", st.mean))
            arrays.append((f"bn.{name}.var", st.var))
        return arrays

    def snapshot(self):
        return copy.deepcopy([(n, a) for n, a in self.state_arrays()])

    def restore(self, snapshot):
        for name, arr in snapshot:
            self._set_array(name, arr)

    def _set_array(self, name, arr):
        if name.startswith("bn."):
            site, stat = name[3:].rsplit(".", 1)
            setattr(self.bn[site], stat, np.array(arr, dtype=float))
            return
        p = self.params[name]
        if p.data.shape != arr.shape:
            raise VersionMismatch(f"{name}: shape {arr.shape}, model expects {p.data.shape}")
        p.data[...] = arr


# -- training -------------------------------------------------------------------

def split_indices(count, val_fraction, seed):
    order = np.random.default_rng([seed, 7]).permutation(count)
    n_val = max(1, int(round(count * val_fraction))) if count > 1 else 0
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def greedy_consistency(model, samples, noise_seed=0):
    """Mean consistency of argmax completions, scored by simulation."""
    from .sampler import score_assignment
    scores = []
    for i, smp in enumerate(samples):
        probs = model.forward(smp.input, noise_seed=[noise_seed, i])
        assign = {r: int(np.argmax(p)) for r, p in probs.items()}
        scores.append(score_assignment(smp.input, assign))
    return float(np.mean(scores)) if scores else 0.0


def train(samples, cfg: ModelConfig = ModelConfig(), hyper: TrainConfig = TrainConfig(),
          log=None, model=None):
    """Adam on minibatch NLL with early stopping on validation consistency.

    Returns ``(model, history, optimizer)``; the model holds the weights of the
    best validation epoch.
    """
    if not samples:
        raise ValueError("empty dataset")
    model = model or SynthModel(cfg)
    train_idx, val_idx = split_indices(len(samples), hyper.val_fraction, hyper.seed)
    val = [samples[i] for i in val_idx]
    opt = nn.Adam(model.parameters(), lr=hyper.lr)
    rng = np.random.default_rng([hyper.seed, 11])
    structs = {i: model.structure(samples[i].input, cache_key=("train", samples[i].seed))
               for i in train_idx}
    history = []
    best, best_metric, stale = None, -1.0, 0
    started = time.monotonic()
    for epoch in range(1, hyper.max_epochs + 1):
        t0 = time.monotonic()
        order = rng.permutation(train_idx)
        losses = []
        for b in range(0, len(order), hyper.batch_size):
            idx = order[b:b + hyper.batch_size]
            batch = batch_structures([structs[i] for i in idx])
            targets = {(g, r): samples[i].targets[r]
                       for g, i in enumerate(idx) for r in structs[i].holes}
            noise = model.draw_noise(batch.n_nodes, rng) if cfg.noise else None
            loss = model.loss_on(batch, targets, True, rng, noise)
            nn.backward(loss)
            opt.step()
            losses.append(loss.item())
        metric = greedy_consistency(model, val, noise_seed=hyper.seed) if val else 0.0
        row = {"epoch": epoch, "train_nll": float(np.mean(losses)), "val_consistency": metric,
               "seconds": time.monotonic() - t0}
        history.append(row)
        if log:
            log(row)
        if metric > best_metric:
            best, best_metric, stale = (model.snapshot(), copy.deepcopy((opt.t, opt.m, opt.v))), metric, 0
        else:
            stale += 1
        if stale >= hyper.patience:
            break
        if hyper.time_budget is not None and time.monotonic() - started > hyper.time_budget:
            break
    if best is not None:
        model.restore(best[0])
        opt.t, opt.m, opt.v = best[1]
    return model, history, opt


# -- checkpoints ----------------------------------------------------------------

def save(model: SynthModel, path, optimizer: nn.Adam | None = None, extra=None):
    header = {"config": asdict(model.config), "manifest": model.manifest(),
              "optimizer": None, "extra": extra or {}}
    arrays = model.state_arrays()
    if optimizer is not None:
        header["optimizer"] = {"t": optimizer.t, "lr": optimizer.lr, "beta1": optimizer.beta1,
                               "beta2": optimizer.beta2, "eps": optimizer.eps}
        for name in model.params:
            arrays.append((f"adam.m.{name}", optimizer.m[name]))
            arrays.append((f"adam.v.{name}", optimizer.v[name]))
    nn.write_container(path, CHECKPOINT_VERSION, header, arrays)


def load(path, expect: ModelConfig | None = None):
    """Returns ``(model, optimizer or None, header)``."""
    version, header, arrays = nn.read_container(path)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        cfg = ModelConfig(**header["config"])
        schema = schema_from_json(header["manifest"]["schema"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"bad header: {exc}") from None
    if expect is not None and (expect.D, expect.N) != (cfg.D, cfg.N):
        raise VersionMismatch(f"checkpoint has D={cfg.D}, N={cfg.N}; expected D={expect.D}, N={expect.N}")
    model = SynthModel(cfg, schema)
    opt = None
    if header.get("optimizer"):
        o = header["optimizer"]
        opt = nn.Adam(model.parameters(), o["lr"], o["beta1"], o["beta2"], o["eps"])
        opt.t = o["t"]
    names = set()
    for name, arr in arrays:
        names.add(name)
        if name.startswith("adam."):
            if opt is None:
                raise CorruptCheckpoint("optimizer moments without optimizer header")
            kind, pname = name[5], name[7:]
            (opt.m if kind == "m" else opt.v)[pname] = arr.copy()
            continue
        try:
            model._set_array(name, arr)
        except KeyError:
            raise CorruptCheckpoint(f"unknown array {name}") from None
    missing = {n for n, _ in model.state_arrays()} - names
    if missing:
        raise CorruptCheckpoint(f"missing arrays: {sorted(missing)[:3]}")
    return model, opt, header
