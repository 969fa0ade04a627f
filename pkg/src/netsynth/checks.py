"""Invariant suite behind ``netsynth check``.

Each check returns a :class:`CheckResult`; none of them raise on a failed
invariant, so one run reports everything.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from . import oracles
from .datagen import GenOptions, check_sample, gen_config, gen_sample, gen_topology
from .errors import NetSynthError
from .factbase import parse
from .netsim import simulate
from .synthmodel import ModelConfig, SynthModel

SMALL = GenOptions(routers_min=3, routers_max=6, externals_min=1, externals_max=3,
                   dests_min=1, dests_max=2, announcers_max=2, weight_min=1, weight_max=4,
                   attr_max=2)

TOY_FACTS = """\
router(a)
router(b)
router(c)
external(e)
network(n)
connected(a,b,?)
connected(b,c,2)
connected(a,c,?)
ibgp(a,b)
ibgp(b,c)
ibgp(a,c)
ebgp(c,e)
bgp_route(e,n,?,1,0,0,1,4)
fwd(a,n,c)
not reachable(b,n,a)
"""


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn):
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except NetSynthError as exc:
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, ok, detail, time.perf_counter() - t0)


def oracle_agreement(count=500, seed=0, options=SMALL):
    """Simulator vs exhaustive stable-state search on small instances."""
    def run():
        rng = np.random.default_rng(seed)
        bad = 0
        for i in range(count):
            s = [seed, i]
            topo = gen_topology(s, int(rng.integers(options.routers_min, options.routers_max + 1)),
                                options)
            topo, cfg = gen_config(s, topo, options)
            agrees, _ = oracles.check_plane(simulate(topo, cfg), topo, cfg)
            bad += not agrees
        return bad == 0, f"{count - bad}/{count} instances agree"
    return _timed("oracle", run)


def dataset_consistency(count=200, seed=0, options=GenOptions(routers_min=6, routers_max=10)):
    def run():
        scores = [check_sample(gen_sample(seed + i, options)) for i in range(count)]
        bad = sum(s != 1.0 for s in scores)
        return bad == 0, f"{count - bad}/{count} samples fully consistent"
    return _timed("dataset", run)


def _op_cases(rng):
    """(name, loss closure, arrays to perturb, their tensors)."""
    x = nn.Parameter("x", rng.normal(size=(5, 4)))
    w = nn.Parameter("w", rng.normal(size=(4, 3)))
    b = nn.Parameter("b", rng.normal(size=3))
    r = nn.constant(rng.normal(size=(5, 3)))
    edges = nn.EdgeIndex(5, [0, 1, 2, 2, 4], [1, 1, 0, 3, 3])
    wg = nn.Parameter("wg", rng.normal(size=(4, 4)))
    a1 = nn.Parameter("a1", rng.normal(size=4))
    a2 = nn.Parameter("a2", rng.normal(size=4))
    rg = nn.constant(rng.normal(size=(5, 4)))
    gamma = nn.Parameter("gamma", rng.normal(size=4))
    beta = nn.Parameter("beta", rng.normal(size=4))

    def weighted(t, c):
        # sum(t * c) built from differentiable ops
        return nn.sum_all(_mul_const(t, c.data))

    return [
        ("linear", lambda: weighted(nn.linear(x, w, b), r), [x, w, b]),
        ("leaky_rectifier", lambda: weighted(nn.linear(nn.leaky_rectifier(x, 0.1), w), r), [x]),
        ("softmax", lambda: weighted(nn.softmax(nn.linear(x, w, b)), r), [x, b]),
        ("log_softmax_nll", lambda: nn.log_softmax_nll(nn.linear(x, w, b), [0, 2, 1, 1, 0]), [x, w, b]),
        ("batch_norm", lambda: weighted(nn.batch_norm(x, gamma, beta, nn.BatchNormState(4), True), rg),
         [x, gamma, beta]),
        ("gat_aggregate", lambda: weighted(nn.gat_aggregate(x, wg, a1, a2, edges, 0.2), rg),
         [x, wg, a1, a2]),
        ("take_rows", lambda: weighted(nn.linear(nn.take_rows(x, [4, 0, 0, 2, 1]), w), r), [x]),
    ]


def _mul_const(t, c):
    return nn._out(t.data * c, (t,), lambda g: nn._acc(t, g * c), "mul_const")


def gradient_checks(seed=0, tol_ops=1e-4, tol_model=1e-3):
    def run():
        rng = np.random.default_rng(seed)
        worst = {}
        for name, f, params in _op_cases(rng):
            worst[name] = _grad_error(f, params)
        model_err = _model_grad_error(seed)
        ok = all(v < tol_ops for v in worst.values()) and model_err < tol_model
        top = max(worst, key=worst.get)
        return ok, f"worst op {top} {worst[top]:.2e}, model {model_err:.2e}"
    return _timed("gradients", run)


def _grad_error(f, params):
    for p in params:
        p.zero_grad()
    nn.backward(f())
    err = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = oracles.numeric_grad(lambda: f().item(), p.data)
        err = max(err, oracles.rel_error(analytic, numeric))
    return err


def _model_grad_error(seed, n_params=40):
    """Composed model NLL vs finite differences on a sample of coordinates."""
    cfg = ModelConfig(D=8, N=8, processor_layers=2, iterations=2, dropout=0.0, init_seed=seed)
    model = SynthModel(cfg)
    fb = parse(TOY_FACTS, value_count=8)
    s = model.structure(fb)
    targets = {k: i % 8 for i, k in enumerate(s.holes)}
    noise = np.random.default_rng(seed).normal(size=(s.n_nodes, cfg.noise_width))

    def loss():
        # train-mode batch statistics, no dropout: a smooth function of the weights
        return model.loss_on(s, targets, True, np.random.default_rng(0), noise)

    for p in model.parameters():
        p.zero_grad()
    nn.backward(loss())
    rng = np.random.default_rng([seed, 1])
    params = model.parameters()
    err = 0.0
    eps = 1e-6
    for _ in range(n_params):
        p = params[int(rng.integers(len(params)))]
        flat = p.data.reshape(-1)
        j = int(rng.integers(flat.size))
        old = flat[j]
        flat[j] = old + eps
        hi = loss().item()
        flat[j] = old - eps
        lo = loss().item()
        flat[j] = old
        num = (hi - lo) / (2 * eps)
        ana = p.grad.reshape(-1)[j]
        if abs(num) + abs(ana) > 1e-7:
            err = max(err, oracles.rel_error(ana, num))
    for p in model.parameters():
        p.zero_grad()
    return err


def distribution_contract(count=100, seed=0, tol=1e-9):
    def run():
        model = SynthModel(ModelConfig(D=16, N=64, processor_layers=2, iterations=1, init_seed=seed))
        worst = 0.0
        opts = GenOptions(routers_min=3, routers_max=8, ospf_only_fraction=0.3, path_fraction=0.2)
        for i in range(count):
            smp = gen_sample(seed * 100003 + i, opts)
            for p in model.forward(smp.input, noise_seed=i).values():
                if (p < 0).any():
                    return False, f"negative probability in input {i}"
                worst = max(worst, abs(p.sum() - 1.0))
        return worst <= tol, f"max |sum - 1| = {worst:.1e} over {count} inputs"
    return _timed("distributions", run)


def run_all(count=500, seed=0):
    return [oracle_agreement(count, seed), dataset_consistency(max(1, count // 2), seed),
            gradient_checks(seed), distribution_contract(max(1, count // 5), seed)]
