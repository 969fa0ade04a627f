from dataclasses import replace

import numpy as np
import pytest

from conftest import DESK
from netsynth import nncore as nn
from netsynth.checks import TOY_FACTS, _model_grad_error
from netsynth.datagen import gen_sample
from netsynth.errors import CorruptCheckpoint, NoHoles, ShapeMismatch, VersionMismatch
from netsynth.factbase import FactBase, HoleRef, holes, parse
from netsynth.synthmodel import ModelConfig, SynthModel, TrainConfig, load, save, split_indices, train

TINY = ModelConfig(D=8, N=64, processor_layers=2, iterations=2, init_seed=3)
SMALL_DESK = replace(DESK, routers_min=4, routers_max=6, spec_counts={"fwd": 4, "reachable": 4,
                                                                      "trafficIsolation": 4})


@pytest.fixture(scope="module")
def samples():
    return [gen_sample(s, SMALL_DESK) for s in range(8)]


def test_forward_is_a_distribution_per_hole(samples):
    model = SynthModel(TINY)
    for s in samples[:3]:
        probs = model.forward(s.input, noise_seed=1)
        assert set(probs) == set(holes(s.input))
        for p in probs.values():
            assert p.shape == (64,) and (p >= 0).all() and abs(p.sum() - 1) < 1e-9


def test_no_holes():
    with pytest.raises(NoHoles):
        SynthModel(TINY).forward(parse("router(A)\n"))


def test_composed_gradient():
    assert _model_grad_error(0) < 1e-3
    assert _model_grad_error(1) < 1e-3


def test_fact_order_equivariance(samples):
    model = SynthModel(replace(TINY, noise=False))
    fb = samples[0].input
    perm = np.random.default_rng(0).permutation(len(fb))
    shuffled = FactBase([fb[int(i)] for i in perm], fb.value_count)
    where = {int(old): new for new, old in enumerate(perm)}
    p1 = model.forward(fb)
    p2 = model.forward(shuffled)
    for r, p in p1.items():
        assert np.allclose(p2[HoleRef(where[r.fact_index], r.arg_index)], p, atol=1e-9, rtol=0)


def test_noise_is_seeded_and_confined(samples):
    model = SynthModel(TINY)
    fb = samples[0].input
    a, b, c = (model.forward(fb, noise_seed=s) for s in (5, 5, 6))
    r = next(iter(a))
    assert np.array_equal(a[r], b[r]) and not np.allclose(a[r], c[r])
    s = model.structure(fb)
    with pytest.raises(ShapeMismatch):
        model.latent(s, noise=np.zeros((s.n_nodes, TINY.D)))
    assert TINY.noise_width == 4
    assert ModelConfig(D=8, noise_channels="all").noise_width == 8


def test_batched_loss_weights_graphs_equally(samples):
    from netsynth.embedding import batch_structures
    model = SynthModel(replace(TINY, noise=False, dropout=0.0))
    one = [model.loss(s).item() for s in samples[:2]]
    s = batch_structures([model.structure(x.input) for x in samples[:2]])
    targets = {(g, r): samples[g].targets[r] for g in range(2) for r in samples[g].targets}
    # eval-mode statistics make the batched pass exactly the two single passes
    both = model.loss_on(s, targets, False, np.random.default_rng(0)).item()
    assert both == pytest.approx(np.mean(one), rel=1e-10)


def test_training_reduces_loss(samples):
    cfg = replace(TINY, dropout=0.0)
    model, hist, _ = train(samples, cfg, TrainConfig(lr=1e-2, batch_size=4, max_epochs=15,
                                                     patience=100, val_fraction=0.25))
    assert hist[-1]["train_nll"] < hist[0]["train_nll"] - 0.3
    assert all(0 <= h["val_consistency"] <= 1 for h in hist)


def test_early_stopping_restores_best(samples):
    model, hist, _ = train(samples[:4], TINY, TrainConfig(lr=1e-2, batch_size=2, max_epochs=6,
                                                          patience=2, val_fraction=0.5))
    assert len(hist) <= 6
    from netsynth.synthmodel import greedy_consistency
    _, val = split_indices(4, 0.5, 0)
    best = max(h["val_consistency"] for h in hist)
    assert greedy_consistency(model, [samples[i] for i in val], noise_seed=0) == pytest.approx(best)


def test_training_is_deterministic(samples, tmp_path):
    hyper = TrainConfig(lr=1e-3, batch_size=4, max_epochs=2, patience=5)
    for name in ("a", "b"):
        m, _, opt = train(samples, TINY, hyper)
        save(m, tmp_path / name, opt)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_checkpoint_roundtrip(samples, tmp_path):
    model, _, opt = train(samples[:4], TINY, TrainConfig(lr=1e-3, batch_size=2, max_epochs=1))
    save(model, tmp_path / "m.ck", opt, extra={"note": "x"})
    back, opt2, header = load(tmp_path / "m.ck", expect=TINY)
    assert header["extra"] == {"note": "x"} and opt2.t == opt.t
    fb = samples[5].input
    p1, p2 = model.forward(fb, noise_seed=2), back.forward(fb, noise_seed=2)
    assert all(np.array_equal(p1[r], p2[r]) for r in p1)
    save(back, tmp_path / "again.ck", opt2, extra={"note": "x"})
    assert (tmp_path / "m.ck").read_bytes() == (tmp_path / "again.ck").read_bytes()
    with pytest.raises(VersionMismatch):
        load(tmp_path / "m.ck", expect=replace(TINY, D=16))


def test_checkpoint_missing_arrays(tmp_path):
    model = SynthModel(TINY)
    arrays = model.state_arrays()[:-1]
    from netsynth.synthmodel import CHECKPOINT_VERSION
    from dataclasses import asdict
    nn.write_container(tmp_path / "x", CHECKPOINT_VERSION,
                       {"config": asdict(TINY), "manifest": model.manifest()}, arrays)
    with pytest.raises(CorruptCheckpoint):
        load(tmp_path / "x")
    nn.write_container(tmp_path / "y", CHECKPOINT_VERSION + 1, {}, [])
    with pytest.raises(VersionMismatch):
        load(tmp_path / "y")


def test_split_is_seeded_partition():
    tr, va = split_indices(50, 0.1, 3)
    assert len(va) == 5 and sorted(tr + va) == list(range(50))
    assert split_indices(50, 0.1, 3) == (tr, va)


def test_toy_fact_base_parses():
    fb = parse(TOY_FACTS, value_count=8)
    assert len(holes(fb)) == 3
