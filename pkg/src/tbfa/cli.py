"""Command-line pipeline: train -> quantize -> attack -> simulate -> ablate -> report.

Exit codes: 0 success (attack achieved), 1 attack not achieved, 2 usage or
configuration error. Every run writes ``manifest_<command>.json`` next to
its outputs with the full resolved configuration. The output directory
defaults to ``$TBFA_OUT`` or ``./tbfa_runs``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackReport, AttackSpec
from .evaluation import split_data
from .harness import (ablate_bitwidth, ablation_rows, layer_histogram, run_trials, write_ablation_csv,
                      write_trials_csv)
from .memsim import DeploymentResult, FlipProfile, deploy_with_research, feasible, layout, total_pages
from .objectives import make_variant
from .quantizer import load_quantized, quantize_model, save_quantized
from .tensor_core import (accuracy, build_cnn, build_mlp, load_idx_dataset, load_model, make_blobs,
                          save_model, train_sgd)
from .bitspace import dump_flips

log = logging.getLogger("tbfa")


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get("TBFA_OUT", "tbfa_runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path, what):
    if path is None or not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def _write_manifest(out: Path, command: str, args):
    config = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    manifest = {"command": command, "config": config,
                "versions": {"tbfa": __version__, "numpy": np.__version__,
                             "python": platform.python_version()}}
    with open(out / f"manifest_{command}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)


# -- dataset options ------------------------------------------------------

def _add_data_args(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", choices=["blobs", "idx"], default="blobs")
    g.add_argument("--data-seed", type=int, default=0)
    g.add_argument("--n-classes", type=int, default=10)
    g.add_argument("--n-features", type=int, default=16)
    g.add_argument("--train-per-class", type=int, default=200)
    g.add_argument("--test-per-class", type=int, default=100)
    g.add_argument("--separation", type=float, default=1.5)
    g.add_argument("--train-images")
    g.add_argument("--train-labels")
    g.add_argument("--test-images")
    g.add_argument("--test-labels")
    g.add_argument("--flatten", action="store_true", help="flatten IDX images for an MLP")


def _check_data_paths(args, need_train):
    if args.dataset != "idx":
        return
    names = ["test_images", "test_labels"] + (["train_images", "train_labels"] if need_train else [])
    for name in names:
        _require(getattr(args, name), f"--{name.replace('_', '-')}")


def _load_data(args):
    if args.dataset == "blobs":
        return make_blobs(args.n_classes, args.n_features, args.train_per_class, args.test_per_class,
                          separation=args.separation, seed=args.data_seed)
    train = None
    if args.train_images:
        train = load_idx_dataset(args.train_images, args.train_labels, flatten=args.flatten)
    test = load_idx_dataset(args.test_images, args.test_labels, flatten=args.flatten)
    return train, test


def _add_attack_args(p):
    g = p.add_argument_group("attack")
    g.add_argument("--variant", choices=["n-to-1", "1-to-1", "1-to-1-stealthy", "untargeted"],
                   default="n-to-1")
    g.add_argument("--source", type=int)
    g.add_argument("--target", type=int)
    g.add_argument("--asr-threshold", type=float, default=0.9999)
    g.add_argument("--stagnation-iters", type=int, default=3)
    g.add_argument("--max-flips", type=int, default=100)
    g.add_argument("--candidates", type=int, default=1, help="bits profiled per layer per iteration")
    g.add_argument("--protect-last-layer", action="store_true")
    g.add_argument("--attack-batch-size", type=int, default=128)
    g.add_argument("--seed", type=int, default=0, help="split seed of the first trial")
    g.add_argument("--trials", type=int, default=1)
    g.add_argument("--parallel", action="store_true")


def _spec(args) -> AttackSpec:
    try:
        variant = make_variant(args.variant, args.source, args.target)
        return AttackSpec(variant, asr_threshold=args.asr_threshold, stagnation_iters=args.stagnation_iters,
                          max_flips=args.max_flips, candidates_per_layer=args.candidates,
                          protect_last_layer=args.protect_last_layer)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _seeds(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    return list(range(args.seed, args.seed + args.trials))


# -- commands -------------------------------------------------------------

def cmd_train(args):
    _check_data_paths(args, need_train=True)
    train, test = _load_data(args)
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    if args.arch == "mlp":
        if train.inputs.ndim != 2:
            raise UsageError("mlp needs flat inputs; pass --flatten for IDX images")
        model = build_mlp(train.inputs.shape[1], args.hidden, n_classes, seed=args.seed)
    else:
        if train.inputs.ndim != 4:
            raise UsageError("cnn needs (C, H, W) image inputs")
        model = build_cnn(train.inputs.shape[1:], tuple(args.channels), n_classes, seed=args.seed)
    model = train_sgd(model, train, args.epochs, args.lr, seed=args.seed, batch_size=args.batch_size,
                      momentum=args.momentum)
    out = _out_dir(args)
    save_model(model, out / "model.tbm")
    _write_manifest(out, "train", args)
    print(f"train accuracy {accuracy(model, train):.4f}  test accuracy {accuracy(model, test):.4f}")
    print(f"wrote {out / 'model.tbm'}")
    return 0


def cmd_quantize(args):
    _require(args.model, "--model")
    _check_data_paths(args, need_train=False)
    model = load_model(args.model)
    try:
        qmodel = quantize_model(model, args.bits)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _, test = _load_data(args)
    out = _out_dir(args)
    save_quantized(qmodel, out / "quantized.tbq")
    _write_manifest(out, "quantize", args)
    print(f"float test accuracy {accuracy(model, test):.4f}  "
          f"{args.bits}-bit test accuracy {accuracy(qmodel.model, test):.4f}")
    print(f"wrote {out / 'quantized.tbq'}")
    return 0


def _report_doc(stats, n_bits, deployment=None, qmodel=None):
    doc = {"kind": "attack", "n_bits": n_bits,
           "summary": {"trials": stats.k, "asr_mean": stats.asr[0], "asr_std": stats.asr[1],
                       "ta_mean": stats.ta[0], "ta_std": stats.ta[1],
                       "flips_mean": stats.flips[0], "flips_std": stats.flips[1],
                       "all_achieved": stats.all_achieved},
           "reports": [r.to_dict() for r in stats.reports], "seeds": stats.seeds}
    if deployment is not None:
        doc["deployment"] = deployment.to_dict(qmodel)
    return doc


def cmd_attack(args):
    _require(args.model, "--model")
    if args.profile is not None:
        _require(args.profile, "--profile")
    _check_data_paths(args, need_train=False)
    spec = _spec(args)
    seeds = _seeds(args)
    qmodel = load_quantized(args.model)
    _, test = _load_data(args)
    try:
        spec.variant.validate(qmodel.model.n_classes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    deployment = None
    if args.profile is not None:
        from .harness import TrialStats
        profile = FlipProfile.load(args.profile)
        reports = []
        for seed in seeds:
            split = split_data(test, spec.variant, seed, args.attack_batch_size)
            report, deployment = deploy_with_research(qmodel, spec, split, profile, args.max_rounds)
            reports.append(report)
        stats = TrialStats.from_reports(reports, seeds)
    else:
        stats = run_trials(qmodel, test, spec, seeds, args.attack_batch_size, parallel=args.parallel)
    n_bits = qmodel.n_bits
    with open(out / "report.json", "w") as fh:
        json.dump(_report_doc(stats, n_bits, deployment, qmodel if deployment else None), fh, indent=2)
    write_trials_csv(out / "results.csv", stats, n_bits)
    for i, r in enumerate(stats.reports):
        with open(out / f"flips_trial{i}.jsonl", "w") as fh:
            dump_flips(r.flips, fh)
    _write_manifest(out, "attack", args)
    for seed, r in zip(seeds, stats.reports):
        hist = layer_histogram(r)
        print(f"seed {seed}: {r.verdict:10s} flips {r.n_flips:3d}  ASR {r.asr:.4f}  "
              f"TA {r.clean_ta:.4f} -> {r.post_attack_ta:.4f}  last-layer {hist.last_layer_fraction:.2f}")
    print(f"wrote {out / 'report.json'}")
    return 0 if stats.all_achieved else 1


def cmd_simulate(args):
    _require(args.model, "--model")
    if args.report is not None:
        _require(args.report, "--report")
    qmodel = load_quantized(args.model)
    try:
        pages = args.pages if args.pages is not None else total_pages(qmodel)
        layout(qmodel, _first_location())
        profile = FlipProfile(pages, args.density, args.profile_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    profile.save(out / "profile.json")
    print(f"profile: {pages} pages, density {args.density}, flippable fraction {profile.flippable_fraction():.4f}")
    if args.report is not None:
        with open(args.report) as fh:
            doc = json.load(fh)
        report = AttackReport.from_dict(doc["reports"][0] if "reports" in doc else doc)
        ok = [f for f in report.flips if feasible(f, qmodel, profile)]
        bad = [f for f in report.flips if not feasible(f, qmodel, profile)]
        result = DeploymentResult(realized=ok, infeasible=bad)
        with open(out / "deployment.json", "w") as fh:
            json.dump({"kind": "deployment", **result.to_dict(qmodel)}, fh, indent=2)
        for f in report.flips:
            addr = layout(qmodel, f.location)
            tag = "ok" if f in ok else "INFEASIBLE"
            print(f"(page # {addr.page} offset # {addr.bit_offset}) {f.old_bit}->{f.new_bit} {tag}")
    _write_manifest(out, "simulate", args)
    return 0


def _first_location():
    from .bitspace import BitLocation
    return BitLocation(0, 0, 0)


def cmd_ablate(args):
    _require(args.model, "--model")
    _check_data_paths(args, need_train=False)
    spec = _spec(args)
    seeds = _seeds(args)
    try:
        bits = [int(b) for b in args.bits.split(",")]
    except ValueError:
        raise UsageError(f"--bits must be comma-separated integers, got {args.bits!r}") from None
    if any(not 2 <= b <= 8 for b in bits):
        raise UsageError("bit-widths must lie in [2, 8]")
    model = load_model(args.model)
    _, test = _load_data(args)
    rows = ablate_bitwidth(model, test, spec, bits, seeds, args.attack_batch_size)
    out = _out_dir(args)
    write_ablation_csv(out / "ablation.csv", rows)
    with open(out / "ablation.json", "w") as fh:
        json.dump({"kind": "ablation", "rows": ablation_rows(rows)}, fh, indent=2)
    _write_manifest(out, "ablate", args)
    _print_ablation(ablation_rows(rows))
    print(f"wrote {out / 'ablation.csv'}")
    return 0


def _print_ablation(rows):
    print(f"{'bits':>4} {'clean':>7} {'ASR':>15} {'TA':>15} {'flips':>13}")
    for r in rows:
        print(f"{r['n_bits']:>4} {r['clean_accuracy']:7.4f} {r['asr_mean']:7.4f}±{r['asr_std']:<7.4f}"
              f"{r['ta_mean']:7.4f}±{r['ta_std']:<7.4f}{r['flips_mean']:6.2f}±{r['flips_std']:<6.2f}")


def cmd_report(args):
    root = Path(args.dir)
    if not root.is_dir():
        raise UsageError(f"not a directory: {root}")
    found = 0
    for path in sorted(root.rglob("*.json")):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError):
            continue
        if not isinstance(doc, dict) or doc.get("kind") not in ("attack", "ablation", "deployment"):
            continue
        found += 1
        print(f"== {path}")
        if doc["kind"] == "attack":
            s = doc["summary"]
            print(f"{s['trials']} trial(s), {doc['n_bits']}-bit: ASR {s['asr_mean']:.4f}±{s['asr_std']:.4f}  "
                  f"TA {s['ta_mean']:.4f}±{s['ta_std']:.4f}  flips {s['flips_mean']:.2f}±{s['flips_std']:.2f}")
            for seed, r in zip(doc["seeds"], doc["reports"]):
                v = r["spec"]
                print(f"  seed {seed} {v['variant']} {v['source']}->{v['target']}: {r['verdict']} "
                      f"flips {r['n_flips']} ASR {r['asr']:.4f} TA {r['post_attack_ta']:.4f} "
                      f"histogram {r['histogram']}")
        elif doc["kind"] == "ablation":
            _print_ablation(doc["rows"])
        else:
            print(f"realized {len(doc['realized'])}, infeasible {len(doc['infeasible'])}")
            for f in doc["realized"] + doc["infeasible"]:
                print(f"  (page # {f.get('page')} offset # {f.get('offset')}) layer {f['layer']} "
                      f"weight {f['weight_index']} bit {f['bit_pos']} {f['old']}->{f['new']}")
    if not found:
        raise UsageError(f"no report files under {root}")
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tbfa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file of option defaults; flags override")
        p.add_argument("--out-dir")
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "train a float victim classifier")
    _add_data_args(p)
    p.add_argument("--arch", choices=["mlp", "cnn"], default="mlp")
    p.add_argument("--hidden", type=int, nargs="+", default=[64])
    p.add_argument("--channels", type=int, nargs="+", default=[4, 8])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = add("quantize", cmd_quantize, "post-quantize a float model")
    _add_data_args(p)
    p.add_argument("--model", required=False)
    p.add_argument("--bits", type=int, default=8)

    p = add("attack", cmd_attack, "run a targeted (or untargeted) bit-flip attack")
    _add_data_args(p)
    _add_attack_args(p)
    p.add_argument("--model", help="quantized model file")
    p.add_argument("--profile", help="flip profile JSON; enables freeze-and-research deployment")
    p.add_argument("--max-rounds", type=int, default=200)

    p = add("simulate", cmd_simulate, "generate a flip profile and map flips to pages")
    p.add_argument("--model", help="8-bit quantized model file")
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--profile-seed", type=int, default=0)
    p.add_argument("--pages", type=int)
    p.add_argument("--report", help="attack report.json whose flips to check")

    p = add("ablate", cmd_ablate, "attack the same float model at several bit-widths")
    _add_data_args(p)
    _add_attack_args(p)
    p.add_argument("--model", help="float model file")
    p.add_argument("--bits", default="2,4,6,8")

    p = add("report", cmd_report, "render stored JSON results as tables")
    p.add_argument("--dir", default=os.environ.get("TBFA_OUT", "tbfa_runs"))
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config``; unknown keys are an error."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    _require(args.config, "--config")
    with open(args.config) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    known = set(vars(args)) - {"func", "config", "command"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {unknown}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"tbfa: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
