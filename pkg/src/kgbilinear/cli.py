"""Command-line interface: ``kgb <command> [options]``.

Data go to stdout, diagnostics to stderr. Exit codes: 0 success,
1 verification or module failure, 2 usage error, 3 I/O error.
"""

import argparse
import json
import logging
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from . import transforms
from .ensemble import load_ensemble, save_ensemble, train_ensemble
from .evaluation import (build_classification_set, classify_triples, evaluate_ranking,
                         read_classification_set, select_thresholds, write_classification_set)
from .kb import KBParseError, dataset_checksum, load_kb_dir, write_dicts, write_kb
from .models import ModelFormatError, ModelKind, load_model, read_meta, save_model
from .synthetic import clustered_kb
from .training import TrainConfig, read_config, train

log = logging.getLogger("kgbilinear")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _version():
    try:
        return version("kgbilinear")
    except PackageNotFoundError:
        return "unknown"


def _default_seed():
    raw = os.environ.get("KGB_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"KGB_SEED must be an integer, got {raw!r}") from None


def write_manifest(artifact, argv, config, checksums, seed, timings):
    manifest = {
        "command_line": list(argv),
        "config": config,
        "dataset_checksums": checksums,
        "seed": seed,
        "tool_version": _version(),
        "timings_s": timings,
    }
    path = artifact + ".manifest.json"
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _load_data(directory):
    t0 = time.perf_counter()
    kb = load_kb_dir(directory)
    log.info("loaded %s: N=%d K=%d train=%d valid=%d test=%d (%.2fs)", directory,
             kb.n_entities, kb.n_relations, len(kb.train), len(kb.valid), len(kb.test),
             time.perf_counter() - t0)
    return kb


def _check_fits(model, kb, what="model"):
    if model.n_entities != kb.n_entities or model.n_relations != kb.n_relations:
        raise ValueError(
            f"{what} has N={model.n_entities}, K={model.n_relations} but dataset has "
            f"N={kb.n_entities}, K={kb.n_relations}")


# ---------------------------------------------------------------------------
# commands

def cmd_train(args, argv):
    values = read_config(args.config) if args.config else {}
    overrides = {"model": args.model, "dim": args.dim, "margin": args.margin, "lr": args.lr,
                 "lambda_e": args.lambda_e, "lambda_r": args.lambda_r,
                 "epochs": args.epochs, "seed": args.seed}
    for key, value in overrides.items():
        if value is not None:
            values[key] = str(value)
    values.setdefault("seed", str(_default_seed()))
    try:
        config = TrainConfig.from_mapping(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    kb = _load_data(args.data)
    t0 = time.perf_counter()
    result = train(kb, config)
    elapsed = time.perf_counter() - t0
    checksum = dataset_checksum(args.data)
    meta = {**{k: v for k, v in config.as_dict().items()}, "dataset_checksum": checksum}
    save_model(result.params, args.out, meta)
    write_manifest(args.out, argv, config.as_dict(), {"data": checksum}, config.seed,
                   {"train": round(elapsed, 3)})
    for epoch, loss in enumerate(result.losses, start=1):
        if epoch == 1 or epoch == len(result.losses) or epoch % max(1, len(result.losses) // 10) == 0:
            log.info("epoch %d loss %.6f", epoch, loss)
    print(f"model={args.out}")
    print(f"epochs={config.epochs}")
    if result.losses:
        print(f"final_loss={result.losses[-1]:.6f}")
    return EXIT_OK


def _print_metrics(summary, label):
    print(summary.table(label))
    print()
    for line in summary.key_values():
        print(line)


def cmd_eval(args, argv):
    kb = _load_data(args.data)
    model = load_model(args.model)
    _check_fits(model, kb)
    summary = evaluate_ranking(model, kb, args.split, threads=args.threads)
    _print_metrics(summary, model.kind.label)
    return EXIT_OK


def _classification_sets(kb, directory, seed):
    sets = {}
    os.makedirs(directory, exist_ok=True)
    for split in ("valid", "test"):
        path = os.path.join(directory, f"classification_{split}_seed{seed}.tsv")
        if os.path.exists(path):
            sets[split] = read_classification_set(kb, path)
        else:
            sets[split] = build_classification_set(kb, split, seed)
            write_classification_set(kb, sets[split], path)
            log.info("wrote %s", path)
    return sets


def cmd_classify(args, argv):
    kb = _load_data(args.data)
    if len(kb.valid) == 0:
        raise ValueError("triple classification needs a validation split")
    if args.ensemble:
        model = load_ensemble(args.ensemble)
        label = model.label
        _check_fits(model.base_models[0], kb)
        anchor = args.ensemble
    elif args.model:
        model = load_model(args.model)
        label = model.kind.label
        _check_fits(model, kb)
        anchor = args.model
    else:
        raise UsageError("classify needs --model or --ensemble")
    seed = args.seed if args.seed is not None else _default_seed()
    directory = args.sets or os.path.dirname(os.path.abspath(anchor))
    sets = _classification_sets(kb, directory, seed)
    thresholds = select_thresholds(model, sets["valid"])
    acc = classify_triples(model, thresholds, sets["test"])
    print(f"{'Model':<8}  {'Accuracy':>8}")
    print(f"{label:<8}  {100 * acc:>8.1f}")
    print()
    print(f"accuracy={100 * acc:.1f}")
    return EXIT_OK


def cmd_ensemble_train(args, argv):
    if len(args.models) < 2:
        raise UsageError("an ensemble needs at least two model files")
    kb = _load_data(args.data)
    checksums = {}
    models = []
    for path in args.models:
        model = load_model(path)
        _check_fits(model, kb, path)
        models.append(model)
        meta = read_meta(path)
        if "dataset_checksum" in meta:
            checksums[path] = meta["dataset_checksum"]
    if len(set(checksums.values())) > 1:
        raise ValueError("model files were trained on different datasets: "
                         + ", ".join(f"{p}={c[:12]}" for p, c in checksums.items()))
    seed = args.seed if args.seed is not None else _default_seed()
    out_dir = os.path.dirname(os.path.abspath(args.out))
    ids = [os.path.relpath(os.path.abspath(p), out_dir) for p in args.models]
    t0 = time.perf_counter()
    ens = train_ensemble(kb, models, seed, reg=args.reg, model_ids=ids)
    elapsed = time.perf_counter() - t0
    save_ensemble(ens, args.out)
    write_manifest(args.out, argv, {"models": ids, "reg": args.reg},
                   {"data": dataset_checksum(args.data), **checksums}, seed,
                   {"ensemble_train": round(elapsed, 3)})
    print(f"ensemble={args.out}")
    print(f"label={ens.label}")
    print(f"relations={len(ens.relations)}")
    return EXIT_OK


def cmd_ensemble_eval(args, argv):
    kb = _load_data(args.data)
    ens = load_ensemble(args.ensemble)
    _check_fits(ens.base_models[0], kb, "ensemble")
    summary = evaluate_ranking(ens, kb, args.split, threads=args.threads)
    _print_metrics(summary, ens.label)
    return EXIT_OK


def cmd_verify(args, argv):
    theorems = list(transforms.VERIFIERS) if args.theorem == "all" else [args.theorem]
    if args.trials == 0:
        log.warning("--trials 0: nothing to verify (vacuous pass)")
    ok = True
    for name in theorems:
        t0 = time.perf_counter()
        report = transforms.verify(name, args.trials, args.n, args.r, args.seed)
        elapsed = time.perf_counter() - t0
        print(report.text())
        for line in report.key_values():
            print(line)
        print(f"runtime_s={elapsed:.3f}")
        for failure in report.failures:
            print("counterexample=" + json.dumps(failure, sort_keys=True))
        print()
        ok &= report.passed
    return EXIT_OK if ok else EXIT_FAIL


_TO_RESCAL = {
    ModelKind.TRANSE: transforms.transe_to_rescal,
    ModelKind.HOLE: transforms.hole_to_rescal,
    ModelKind.DISTMULT: transforms.distmult_to_rescal,
    ModelKind.COMPLEX: transforms.complex_to_rescal,
}


def cmd_transform(args, argv):
    model = load_model(args.model)
    if model.kind == ModelKind.RESCAL:
        raise UsageError("model is already RESCAL")
    lifted = _TO_RESCAL[model.kind](model)
    meta = dict(read_meta(args.model))
    meta.update({"transformed_from": model.kind.label, "source_dim": model.dim})
    for key in ("kind", "entities", "relations", "dim"):
        meta.pop(key, None)
    save_model(lifted, args.out, meta)
    write_manifest(args.out, argv, {"source": args.model}, {}, None, {})
    print(f"model={args.out}")
    print(f"source={model.kind.label}")
    print(f"source_dim={model.dim}")
    print("target=RESCAL")
    print(f"target_dim={lifted.dim}")
    return EXIT_OK


def cmd_synth(args, argv):
    seed = args.seed if args.seed is not None else _default_seed()
    kb = clustered_kb(n_entities=args.entities, n_clusters=args.clusters, n_train=args.train,
                      n_valid=args.valid, n_test=args.test, seed=seed)
    write_kb(kb, args.out)
    write_dicts(kb, args.out)
    print(f"data={args.out}")
    print(f"entities={kb.n_entities}")
    print(f"relations={kb.n_relations}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="kgb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True, help="directory with train/valid/test.txt")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--model", choices=["rescal", "distmult", "hole", "complex", "transe"])
    p.add_argument("--dim", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-e", dest="lambda_e", type=float)
    p.add_argument("--lambda-r", dest="lambda_r", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="model.kgbm")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="filtered entity ranking")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="triple classification accuracy")
    p.add_argument("--model")
    p.add_argument("--ensemble")
    p.add_argument("--data", required=True)
    p.add_argument("--sets", help="directory for the persisted classification sets")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("ensemble", help="relation-level stacking ensemble")
    esub = p.add_subparsers(dest="action", required=True)
    q = esub.add_parser("train")
    q.add_argument("--models", nargs="+", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--out", default="ensemble.txt")
    q.add_argument("--reg", type=float, default=1.0)
    q.add_argument("--seed", type=int)
    q.set_defaults(func=cmd_ensemble_train)
    q = esub.add_parser("eval")
    q.add_argument("--ensemble", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--split", default="test", choices=["train", "valid", "test"])
    q.add_argument("--threads", type=int, default=1)
    q.set_defaults(func=cmd_ensemble_eval)

    p = sub.add_parser("verify", help="randomized checks of the model constructions")
    p.add_argument("--theorem", default="all", choices=["all", *transforms.VERIFIERS])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--n", type=int, help="max entities per instance")
    p.add_argument("--r", type=int, help="max embedding size per instance")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("transform", help="convert a model file to an equivalent RESCAL model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--clusters", type=int, default=20)
    p.add_argument("--train", type=int, default=3000)
    p.add_argument("--valid", type=int, default=300)
    p.add_argument("--test", type=int, default=300)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("kgbilinear")
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args, ["kgb", *argv])
    except UsageError as exc:
        print(f"kgb: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, KBParseError, ModelFormatError) as exc:
        print(f"kgb: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError, KeyError) as exc:
        print(f"kgb: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    finally:
        root.removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
