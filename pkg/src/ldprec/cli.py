"""Command-line entry point: ``ldprec <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from . import attacks, bloom, clustering, decoder, experiment, perturbation, profiles
from .experiment import ExperimentConfig, StageError

BASIC_EPSILONS = (0.1, 0.25, 0.4, 0.55, 0.7, 0.85)
ADVANCED_EPSILONS = (0.1, 1.2, 2.4)


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON) mapping of :class:`ExperimentConfig` fields."""
    if path is None:
        return ExperimentConfig()
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config {path} must hold a key-value mapping")
    return ExperimentConfig.from_dict(data)


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.full_scale:
        cfg = cfg.full_scale()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "epsilon", None) is not None:
        cfg = replace(cfg, epsilon=args.epsilon, f=None)
    return cfg


def _write_meta(out, args, cfg, timings=None):
    meta = {
        "command": args.command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "timings_s": timings or {},
    }
    with open(os.path.join(out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def _load_or_generate(args, cfg) -> profiles.LabeledDataset:
    if getattr(args, "dataset", None):
        return profiles.read_dataset(args.dataset)
    tax = profiles.builtin_taxonomy(cfg.taxonomy)
    return profiles.generate_dataset(tax, cfg.profile_count, seed=cfg.seed, **cfg.dataset_kwargs())


# -- commands --------------------------------------------------------------


def cmd_generate(args, cfg, out):
    count = args.count or cfg.profile_count
    tax = profiles.builtin_taxonomy(cfg.taxonomy)
    ds = profiles.generate_dataset(tax, count, seed=cfg.seed, **cfg.dataset_kwargs())
    path = os.path.join(out, "dataset.csv")
    profiles.write_dataset(ds, path)
    print(f"wrote {len(ds)} profiles to {path}")


def cmd_encode(args, cfg, out):
    ds = _load_or_generate(args, cfg)
    params = cfg.bloom()
    path = os.path.join(out, "encoded.txt")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(ds)):
            fh.write(bloom.bits_to_hex(bloom.encode(ds.values(i), params)) + "\n")
    print(f"encoded {len(ds)} profiles (m={params.m}, k={params.k}) to {path}")


def cmd_perturb(args, cfg, out):
    ds = _load_or_generate(args, cfg)
    params, priv = cfg.bloom(), cfg.privacy()
    client = perturbation.ClientState(cfg.seed)
    path = os.path.join(out, "reports.jsonl")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(ds)):
            cid = f"user-{i}"
            for session in range(args.sessions):
                bits = perturbation.perturb_report(client, cid, ds.values(i), params, priv)
                fh.write(perturbation.ReportRecord.build(cid, bits, priv, session).to_json() + "\n")
    print(f"wrote {len(ds) * args.sessions} reports to {path}")


def cmd_train(args, cfg, out):
    pop = experiment._Population(cfg)
    params, priv = cfg.bloom(), cfg.privacy()
    X_train = pop.perturb(pop.train, "train-", params, priv)
    X_test = pop.perturb(pop.test, "test-", params, priv)
    dec = decoder.ProfileDecoder(pop.taxonomy.class_counts, cfg.decoder(), random_state=cfg.seed)
    dec.fit(X_train, pop.train.labels)
    pred = dec.predict(X_test)
    summary = {}
    for c, cat in enumerate(pop.taxonomy.categories):
        decoder.save_model(dec.estimators_[c], os.path.join(out, f"model_{cat.name}.json"))
        rep = decoder.classification_report(pop.test.labels[:, c], pred[:, c], len(cat.classes))
        attacks.write_confusion_csv(rep, os.path.join(out, f"confusion_{cat.name}.csv"), cat.classes)
        summary[cat.name] = rep.to_dict()
        print(f"{cat.name}: accuracy {rep.accuracy:.3f}")
    with open(os.path.join(out, "train_report.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)


def cmd_cluster(args, cfg, out):
    ds = _load_or_generate(args, cfg)
    X = clustering.profile_features(ds.labels, ds.taxonomy)
    res = clustering.kmeans(X, cfg.clusters, seed=cfg.seed, n_init=cfg.kmeans_restarts)
    clustering.write_clustering_csv(res, os.path.join(out, "clustering.csv"))
    curve = clustering.elbow_scan(X, cfg.k_range, seed=cfg.seed, n_init=cfg.kmeans_restarts)
    with open(os.path.join(out, "elbow.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "wcss"])
        w.writerows(curve)
    print(f"K={cfg.clusters}: wcss={res.wcss:.3f} after {res.iterations} iterations")


def cmd_attack(args, cfg, out):
    timings = {}
    if args.game == "basic":
        eps = args.epsilons or BASIC_EPSILONS
        rep = experiment.run_basic_grid(cfg, eps, cfg.hash_counts)
        rows = [dict(r["grid"], trials=r["trials"], successes=r["successes"]) for r in rep.records]
        attacks.write_attack_grid_csv(rows, os.path.join(out, "attack_basic.csv"))
        rep.write(out)
        timings = rep.timings
        print(f"basic adversary: mean success {np.mean([r['success_rate'] for r in rep.records]):.4f}")
    elif args.game == "advanced":
        tax = profiles.builtin_taxonomy(cfg.taxonomy)
        category = args.category or cfg.attack_category or tax.categories[0].name
        rows = []
        for e in args.epsilons or ADVANCED_EPSILONS:
            point = replace(cfg, epsilon=e, f=None)
            res, report = attacks.run_advanced_game(
                tax, category, cfg.train_size, cfg.test_size, point.privacy(), point.bloom(),
                seed=cfg.seed, dataset_kwargs=cfg.dataset_kwargs(), estimator=cfg.decoder(),
            )
            rows.append({"epsilon": e, "k": cfg.hash_count, "trials": res.trials, "successes": res.successes})
            names = tax.categories[tax.category_index(category)].classes
            attacks.write_confusion_csv(report, os.path.join(out, f"confusion_{category}_eps{e}.csv"), names)
            print(f"advanced adversary on {category}, eps={e}: success {res.success_rate:.3f}")
        attacks.write_attack_grid_csv(rows, os.path.join(out, "attack_advanced.csv"))
    else:
        tax = profiles.builtin_taxonomy(cfg.taxonomy)
        values = tax.values_of([0] * tax.n_categories)
        res = attacks.run_averaging_game(values, cfg.privacy(), cfg.bloom(), args.observations, seed=cfg.seed)
        with open(os.path.join(out, "averaging.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bit", "clean", "permanent", "mean", "estimate"])
            for i in range(res.means.size):
                w.writerow([i, int(res.clean[i]), int(res.permanent[i]), repr(float(res.means[i])), int(res.estimate[i])])
        print(
            f"averaging over {args.observations} reports: hamming to permanent "
            f"{res.hamming_to_permanent}, to clean {res.hamming_to_clean} ({res.verdict})"
        )
    _write_meta(out, args, cfg, timings)


def cmd_pipeline(args, cfg, out):
    rep = experiment.run_pipeline(cfg)
    rep.write(out)
    experiment.write_curve_csv(rep, os.path.join(out, "pipeline.csv"), _CURVE_COLUMNS)
    _write_meta(out, args, cfg, rep.timings)
    rec = rep.records[0]
    print(f"clustering utility {rec['clustering_utility']:.3f}, decoder accuracy {rec['decoder_accuracy']:.3f}")


_CURVE_COLUMNS = ("epsilon1", "epsilon2", "m", "k", "decoder_accuracy", "clustering_utility", "attack_success", "privacy")


def cmd_sweep(args, cfg, out):
    rep = experiment.run_sweep(cfg, args.sweep)
    rep.write(out)
    experiment.write_curve_csv(rep, os.path.join(out, f"sweep_{args.sweep}.csv"), _CURVE_COLUMNS)
    _write_meta(out, args, cfg, rep.timings)
    for r in rep.to_dict()["records"]:
        print(f"{r['grid']}: clustering utility {r['clustering_utility']:.3f}")


def cmd_tradeoff(args, cfg, out):
    rep = experiment.run_tradeoff(cfg)
    rep.write(out)
    experiment.write_curve_csv(rep, os.path.join(out, "tradeoff.csv"), _CURVE_COLUMNS)
    _write_meta(out, args, cfg, rep.timings)
    print(f"intersection: {rep.summary['intersection']}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON file of experiment settings")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--full-scale", action="store_true", help="use 20000/10000/80000 sample sizes")

    parser = argparse.ArgumentParser(prog="ldprec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic profile dataset")
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_generate)

    for name, func, helptext in (
        ("encode", cmd_encode, "Bloom-encode a dataset"),
        ("perturb", cmd_perturb, "write perturbed report records"),
        ("cluster", cmd_cluster, "kmeans and elbow scan of a dataset"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--dataset", help="dataset file from 'generate' (default: generate one)")
        p.add_argument("--epsilon", type=float)
        if name == "perturb":
            p.add_argument("--sessions", type=int, default=1, help="reports per client")
        p.set_defaults(func=func)

    p = sub.add_parser("train", parents=[common], help="train per-category decoders")
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", parents=[common], help="run a privacy game")
    p.add_argument("game", choices=("basic", "advanced", "averaging"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--epsilons", type=float, nargs="+")
    p.add_argument("--category")
    p.add_argument("--observations", type=int, default=100000)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("pipeline", parents=[common], help="end-to-end run at one setting")
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", parents=[common], help="pipeline over a parameter grid")
    p.add_argument("sweep", choices=("epsilon", "bloom_size", "hash_count"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tradeoff", parents=[common], help="privacy vs utility curves")
    p.set_defaults(func=cmd_tradeoff)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except Exception as exc:
        print(f"error: stage 'config' failed: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    try:
        args.func(args, cfg, args.out)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: stage '{args.command}' failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
