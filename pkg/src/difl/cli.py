"""Command line entry point.

Subcommands:

  synth       materialize the two synthetic domains (manifests + PGM files)
  train       train one model (lower / upper / difl) and save a checkpoint
  eval        score a manifest with a checkpoint and print metrics JSON
  experiment  full lower / DIFL / upper protocol for one dataset pair
  matrix      the experiment over every ordered pair of configured datasets
  gradcheck   finite-difference audit of the autodiff core

Exit codes: 0 success, 1 failed run (one-line diagnostic on stderr),
2 usage error (argparse).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import __version__, config, experiment, kernels, selfcheck
from .data import split_80_20, synth_two_domain
from .errors import DiflError
from .models import load_checkpoint, save_checkpoint
from .training import train_baseline, train_difl


def build_parser():
    p = argparse.ArgumentParser(
        prog="difl",
        description="domain invariant feature learning for binary image "
                    "classification under domain shift")
    p.add_argument("--version", action="version", version=f"difl {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp, out_default=None):
        sp.add_argument("--config", help="YAML config file (defaults apply "
                        "to anything not set)")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int, help="override base seed")

    sp = sub.add_parser("synth", help="generate the synthetic two-domain data")
    common(sp, out_default="data")

    sp = sub.add_parser("train", help="train one model and save a checkpoint")
    sp.add_argument("--model", required=True, choices=("lower", "upper", "difl"))
    common(sp, out_default="train_out")
    sp.add_argument("--source", help="source dataset name (default from config)")
    sp.add_argument("--target", help="target dataset name (default from config)")

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="manifest csv to score")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--out", help="also write the metrics JSON here")

    sp = sub.add_parser("experiment", help="lower / DIFL / upper on one pair")
    common(sp)
    sp.add_argument("--source", help="source dataset name (default from config)")
    sp.add_argument("--target", help="target dataset name (default from config)")
    sp.add_argument("--trials", type=int, help="override trial count")
    sp.add_argument("--jobs", type=int, help="parallel trial workers")

    sp = sub.add_parser("matrix", help="experiment over every ordered pair")
    common(sp)
    sp.add_argument("--trials", type=int, help="override trial count")
    sp.add_argument("--jobs", type=int, help="parallel trial workers")

    sp = sub.add_parser("gradcheck", help="audit gradients by finite differences")
    sp.add_argument("--seeds", type=int, default=5,
                    help="random draws per check (default 5)")
    return p


def _load(args):
    cfg = config.load_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else ""
    if getattr(args, "seed", None) is not None:
        cfg["base_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        cfg["trials"] = args.trials
    if getattr(args, "jobs", None) is not None:
        cfg["jobs"] = args.jobs
    if getattr(args, "out", None) is not None:
        cfg["out"] = args.out
    if getattr(args, "source", None) is not None:
        cfg["source"] = args.source
    if getattr(args, "target", None) is not None:
        cfg["target"] = args.target
    return cfg, base


def _cmd_synth(args):
    cfg, _ = _load(args)
    if args.seed is not None:
        cfg["synth"]["seed"] = args.seed
    a, b = synth_two_domain(config.synth_config_of(cfg), args.out)
    for ds in (a, b):
        print(f"wrote {len(ds)} images under {os.path.join(args.out, ds.name)}")
    return 0


def _cmd_train(args):
    cfg, base = _load(args)
    spec = config.model_spec_of(cfg)
    extent = int(cfg["extent"])
    seed = int(cfg["base_seed"])
    tcfg = dataclasses.replace(config.training_config_of(cfg, args.model),
                               seed=seed)

    def split_of(name):
        path = config.dataset_path(cfg, name, base)
        return split_80_20(experiment.load_dataset_cached(path, extent), seed)

    if args.model == "lower":
        model = train_baseline(split_of(cfg["source"]).train, tcfg, spec)
    elif args.model == "upper":
        model = train_baseline(split_of(cfg["target"]).train, tcfg, spec)
    else:
        model = train_difl(split_of(cfg["source"]).train,
                           split_of(cfg["target"]).train, tcfg, spec)

    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, f"{args.model}.npz")
    networks = {"generator": model.generator, "classifier": model.classifier}
    if model.discriminator is not None:
        networks["discriminator"] = model.discriminator
    save_checkpoint(ckpt, networks, seed)
    model.write_history(os.path.join(args.out, f"{args.model}_losses.csv"))
    steps = model.history[-1][0] + 1 if model.history else 0
    state = "converged" if model.converged else "hit the epoch budget"
    print(f"{args.model}: {state} after {steps} steps")
    print(f"checkpoint: {ckpt}")
    return 0


def _cmd_eval(args):
    networks, _ = load_checkpoint(args.checkpoint)
    for role in ("generator", "classifier"):
        if role not in networks:
            raise DiflError(f"checkpoint {args.checkpoint} has no {role}")
    gen = networks["generator"]
    extent = gen.spec.in_shape[1]
    ds = experiment.load_dataset_cached(args.data, extent)
    tm, curve = experiment.evaluate_model(gen, networks["classifier"], ds,
                                          args.threshold)
    payload = {
        "data": args.data,
        "n": len(ds),
        "threshold": args.threshold,
        "accuracy": tm.accuracy,
        "sensitivity": tm.sensitivity,
        "specificity": tm.specificity,
        "auc": tm.auc,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _print_table(report):
    for key in experiment.MODEL_KEYS:
        label = experiment.TABLE_LABELS[key]
        acc = report.reports[key].formatted("accuracy")
        print(f"{label:<22s} accuracy {acc}")
    inv = report.reports["difl_source"].formatted("accuracy")
    print(f"{'DIFL on source':<22s} accuracy {inv}")


def _cmd_experiment(args):
    cfg, base = _load(args)
    expc = config.experiment_config_of(cfg, base_dir=base)
    report = experiment.run_pair(expc)
    experiment.emit_report(report, expc.outdir)
    print(f"{report.pair_label}  ({report.trials} trials, "
          f"base seed {report.base_seed})")
    _print_table(report)
    print(f"report: {expc.outdir}")
    return 0


def _cmd_matrix(args):
    cfg, base = _load(args)
    configs = config.matrix_configs_of(cfg, base_dir=base)
    reports, failures = experiment.run_matrix(configs, cfg["out"])
    for report in reports:
        print(f"{report.pair_label}")
        _print_table(report)
    for pair, msg in failures:
        print(f"failed: {pair}: {msg}", file=sys.stderr)
    print(f"report: {cfg['out']}")
    return 1 if failures else 0


def _cmd_gradcheck(args):
    if args.seeds < 1:
        raise DiflError(f"--seeds must be >= 1, got {args.seeds}")
    print(f"kernel backend: {kernels.BACKEND}")
    ok = selfcheck.report(selfcheck.run(seeds=args.seeds))
    return 0 if ok else 1


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "experiment": _cmd_experiment,
    "matrix": _cmd_matrix,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (DiflError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
