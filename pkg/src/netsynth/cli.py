"""Command line: ``netsynth <command> [flags]``.

Exit status: 0 ok, 2 usage, 3 data error, 4 convergence error, 5 invariant
failure. Errors are reported on stderr as ``error: <ErrorName>: <message>``.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks, evaluation
from .datagen import GenOptions, gen_config, gen_dataset, gen_topology, load_dataset, mask_facts
from .errors import InvariantFailure, NetSynthError
from .factbase import FactBase, parse, serialize
from .netsim import config_from_facts, facts_from_config, simulate
from .sampler import best_of
from .specification import KINDS, consistency, per_predicate_breakdown, spec_from_facts
from .synthmodel import ModelConfig, TrainConfig, load, save, train


def _options(args, **extra):
    kw = {}
    if args.routers_min is not None:
        kw["routers_min"] = args.routers_min
    if args.routers_max is not None:
        kw["routers_max"] = args.routers_max
    if getattr(args, "requirements", None) is not None:
        kw["spec_counts"] = {k: args.requirements for k in KINDS}
    if getattr(args, "ospf_only", False):
        kw["mask"] = "ospf"
    kw.update(extra)
    opts = GenOptions(**kw)
    if opts.routers_min > opts.routers_max:
        raise SystemExit(_usage("--routers-min exceeds --routers-max"))
    return opts


def _usage(msg):
    print(f"usage error: {msg}", file=sys.stderr)
    return 2


def _read_facts(path) -> FactBase:
    return parse(Path(path).read_text())


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


# -- commands --------------------------------------------------------------------

def cmd_gen_topo(args):
    opts = _options(args)
    n = int(np.random.default_rng([args.seed, 0]).integers(opts.routers_min, opts.routers_max + 1))
    topo = gen_topology([args.seed, 1], n, opts)
    topo, cfg = gen_config([args.seed, 2], topo, opts)
    facts, _ = mask_facts(facts_from_config(topo, cfg), opts.mask)
    _write(args.out, serialize(FactBase(facts, opts.value_count)))


def cmd_gen_dataset(args):
    if args.out is None:
        raise SystemExit(_usage("gen-dataset needs --out"))
    opts = _options(args, ospf_only_fraction=args.ospf_only_fraction,
                    path_fraction=args.path_fraction)
    gen_dataset(args.out, args.count, args.seed, opts, workers=args.workers or 1)
    print(f"wrote {args.count} samples to {args.out}")


def cmd_train(args):
    if args.dataset is None or args.checkpoint is None:
        raise SystemExit(_usage("train needs --dataset and --checkpoint"))
    samples, meta = load_dataset(args.dataset)
    cfg = ModelConfig(D=args.dim, N=samples[0].input.value_count if samples else 64,
                      noise=not args.no_noise, init_seed=args.seed)
    hyper = TrainConfig(lr=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                        patience=args.patience, seed=args.seed, time_budget=args.time_budget)
    log_path = Path(str(args.checkpoint) + ".log")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w") as log:
        log.write("epoch,train_nll,val_consistency,seconds\n")

        def emit(row):
            log.write(f"{row['epoch']},{row['train_nll']:.6f},{row['val_consistency']:.6f},"
                      f"{row['seconds']:.2f}\n")
            log.flush()
            if not args.quiet:
                print(f"epoch {row['epoch']} nll {row['train_nll']:.4f} "
                      f"val {row['val_consistency']:.4f}", file=sys.stderr)
        model, history, opt = train(samples, cfg, hyper, log=emit)
    best = max(history, key=lambda r: r["val_consistency"])
    save(model, args.checkpoint, opt, extra={"dataset_meta": meta, "epochs_run": len(history),
                                             "best_epoch": best["epoch"]})
    print(f"best validation consistency {best['val_consistency']:.4f} at epoch {best['epoch']}")


def _load_model(args):
    model, _, _ = load(args.checkpoint)
    if args.no_noise:
        model.config = replace(model.config, noise=False)
    return model


def cmd_synth(args):
    if args.checkpoint is None:
        raise SystemExit(_usage("synth needs --checkpoint"))
    fb = _read_facts(args.input)
    model = _load_model(args)
    res = best_of(model, fb, args.samples, args.shots, args.seed)
    completed = res.completed(fb)
    _write(args.out, serialize(completed))
    topo, cfg = config_from_facts(completed)
    record = {"consistency": res.consistency, "sample_index": res.sample_index,
              "samples_used": len(res.scores), "scores": res.scores,
              "breakdown": per_predicate_breakdown(simulate(topo, cfg), spec_from_facts(fb)),
              "failures": [str(f) for f in res.failures]}
    text = json.dumps(record, sort_keys=True)
    if args.out not in (None, "-"):
        Path(str(args.out) + ".json").write_text(text + "\n")
    print(text, file=sys.stderr if args.out in (None, "-") else sys.stdout)


def cmd_eval(args):
    model = _load_model(args) if args.checkpoint else None
    opts = _options(args)
    if args.ospf_only:
        seeds = np.random.default_rng([args.seed, 99]).integers(2**31, size=args.count)
        req = args.requirements or 16
        tasks = [evaluation.unsat_task(int(s), args.conflicts, opts, req) for s in seeds]
        reports = {f"unsat{args.conflicts}": evaluation.unsat_eval(
            model, tasks, args.samples, args.shots, args.seed, label=f"unsat-{args.conflicts}")}
    else:
        sizes = (args.requirements,) if args.requirements else evaluation.SUITE_SIZES
        reports = {f"3x{k}": v for k, v in evaluation.run_suite(
            model, args.seed, args.count, opts, sizes, args.samples, args.shots).items()}
    out = Path(args.out) if args.out else None
    for name, rep in reports.items():
        sys.stdout.write(rep.to_text())
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{name}.tsv").write_text(rep.to_text())
            (out / f"{name}.json").write_text(rep.to_json() + "\n")


def cmd_simulate(args):
    fb = _read_facts(args.input)
    topo, cfg = config_from_facts(fb)
    plane = simulate(topo, cfg)
    lines = [str(f) for f in plane.to_facts()]
    spec = spec_from_facts(fb)
    if len(spec):
        lines.append(f"# consistency {consistency(plane, spec):.6f} ({len(spec)} requirements)")
    _write(args.out, "\n".join(lines) + "\n")


def cmd_check(args):
    results = checks.run_all(args.count, args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.ok]
    if failed:
        raise InvariantFailure(f"failed checks: {', '.join(failed)}")


# -- parser ----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="netsynth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, routers=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out")
        if routers:
            sp.add_argument("--routers-min", type=int)
            sp.add_argument("--routers-max", type=int)

    def sampling(sp):
        sp.add_argument("--checkpoint")
        sp.add_argument("--samples", type=int, default=5)
        sp.add_argument("--shots", type=int, default=4)
        sp.add_argument("--no-noise", action="store_true")

    sp = sub.add_parser("gen-topo", help="write a fact-base skeleton with holes")
    common(sp)
    sp.add_argument("--ospf-only", action="store_true", help="leave only link weights open")
    sp.set_defaults(fn=cmd_gen_topo)

    sp = sub.add_parser("gen-dataset", help="generate a training dataset directory")
    common(sp)
    sp.add_argument("--count", type=int, default=1024)
    sp.add_argument("--requirements", type=int, help="fixed requirement count per kind")
    sp.add_argument("--ospf-only", action="store_true")
    sp.add_argument("--ospf-only-fraction", type=float, default=0.0)
    sp.add_argument("--path-fraction", type=float, default=0.0)
    sp.add_argument("--workers", type=int)
    sp.set_defaults(fn=cmd_gen_dataset)

    sp = sub.add_parser("train", help="train a model on a dataset")
    common(sp, routers=False)
    sp.add_argument("--dataset")
    sp.add_argument("--checkpoint")
    sp.add_argument("--dim", type=int, default=64)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--patience", type=int, default=20)
    sp.add_argument("--time-budget", type=float)
    sp.add_argument("--no-noise", action="store_true")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("synth", help="complete one fact base with a trained model")
    common(sp, routers=False)
    sampling(sp)
    sp.add_argument("input")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("eval", help="evaluate a model (or uniform sampling) on a task suite")
    common(sp)
    sampling(sp)
    sp.add_argument("--count", type=int, default=10, help="tasks per requirement band")
    sp.add_argument("--requirements", type=int, help="single band: requirements per kind")
    sp.add_argument("--ospf-only", action="store_true", help="OSPF path tasks with conflicts")
    sp.add_argument("--conflicts", type=int, default=0)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("simulate", help="forwarding plane of a hole-free fact base")
    common(sp, routers=False)
    sp.add_argument("input")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("check", help="run the invariant suite")
    common(sp, routers=False)
    sp.add_argument("--count", type=int, default=500)
    sp.set_defaults(fn=cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except NetSynthError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
