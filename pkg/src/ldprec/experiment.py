"""End-to-end experiments: perturb, decode, cluster, attack, sweep.

Every run is a pure function of an :class:`ExperimentConfig`. Reports carry
the hash of the config that produced them and serialize to byte-identical
JSON for identical inputs; wall-clock data lives in ``report.timings`` and is
kept out of the serialized body.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .attacks import AttackSetup, run_basic_game
from .bloom import BloomParams, optimal_m
from .clustering import kmeans, matched_accuracy, profile_features
from .decoder import MLPDecoder, ProfileDecoder, classification_report
from .perturbation import ClientState, PrivacyParams, budget, perturb_many
from .profiles import builtin_taxonomy, generate_dataset

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "StageError",
    "run_pipeline",
    "run_sweep",
    "run_tradeoff",
    "run_basic_grid",
    "find_intersection",
    "REPORT_SCHEMA",
    "validate_report",
]

FULL_SCALE = {"train_size": 20000, "test_size": 10000, "profile_count": 80000}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    taxonomy: str = "preference"
    train_size: int = 2000
    test_size: int = 1000
    profile_count: int = 8000
    # archetype population; None draws every category independently
    n_archetypes: Optional[int] = 4
    adherence: float = 0.8
    class_weights: Optional[list] = None
    # Bloom sizing: exactly one of bloom_size / false_positive_rate
    bloom_size: Optional[int] = 144
    false_positive_rate: Optional[float] = None
    hash_count: int = 3
    hash_seed: int = 0
    # privacy: epsilon (permanent-round budget) or explicit f
    epsilon: Optional[float] = 0.8
    f: Optional[float] = None
    p: float = 0.5
    q: float = 0.75
    # decoder
    hidden1_size: int = 60
    hidden2_size: int = 50
    dropout_rate: float = 0.2
    epochs: int = 25
    batch_size: int = 70
    learning_rate: float = 1e-3
    # clustering
    clusters: int = 4
    k_range: tuple = (1, 15)
    kmeans_restarts: int = 1
    # privacy side
    attack_category: Optional[str] = None
    attack_trials: int = 10000
    # sweep grids
    epsilons: tuple = (0.1, 0.4, 0.8, 1.2, 2.0)
    bloom_sizes: tuple = (48, 96, 144, 192)
    hash_counts: tuple = (3, 5, 7, 9)
    tradeoff_epsilons: tuple = (0.1, 0.3, 0.5, 0.7, 0.9, 1.2, 1.6, 2.0, 2.4)
    seed: int = 0

    def __post_init__(self):
        for name in ("k_range", "epsilons", "bloom_sizes", "hash_counts", "tradeoff_epsilons"):
            setattr(self, name, tuple(getattr(self, name)))
        if (self.bloom_size is None) == (self.false_positive_rate is None):
            raise ValueError("set exactly one of bloom_size and false_positive_rate")
        if (self.epsilon is None) == (self.f is None):
            raise ValueError("set exactly one of epsilon and f")
        if min(self.train_size, self.test_size, self.profile_count) < 1:
            raise ValueError("dataset sizes must be positive")
        if self.clusters < 1:
            raise ValueError("clusters must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def full_scale(self) -> "ExperimentConfig":
        return replace(self, **FULL_SCALE)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    # -- derived parameters ------------------------------------------------

    def bloom(self) -> BloomParams:
        n = builtin_taxonomy(self.taxonomy).n_classes
        if self.bloom_size is not None:
            return BloomParams(m=self.bloom_size, k=self.hash_count, n=n, hash_seed=self.hash_seed)
        m = optimal_m(n, self.false_positive_rate)
        return BloomParams(m=m, k=self.hash_count, n=n, f_p=self.false_positive_rate, hash_seed=self.hash_seed)

    def privacy(self) -> PrivacyParams:
        if self.epsilon is not None:
            return PrivacyParams.from_epsilon(self.epsilon, self.hash_count, self.p, self.q)
        if self.f == 0.0 and self.p == 0.0 and self.q == 1.0:
            return PrivacyParams.noiseless(self.hash_count)
        return PrivacyParams(f=self.f, p=self.p, q=self.q, k=self.hash_count)

    def decoder(self) -> MLPDecoder:
        return MLPDecoder(
            hidden_sizes=(self.hidden1_size, self.hidden2_size),
            dropout=self.dropout_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
        )

    def dataset_kwargs(self) -> dict:
        kw = {"class_weights": self.class_weights}
        if self.n_archetypes is not None:
            kw.update(n_archetypes=self.n_archetypes, adherence=self.adherence, population_seed=self.seed)
        return kw


def _jsonable(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    config_hash: str
    seed: int
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "schema": "ldprec.report/1",
                "kind": self.kind,
                "provenance": {"config_hash": self.config_hash, "seed": self.seed},
                "config": self.config,
                "records": sorted(self.records, key=lambda r: json.dumps(r["grid"], sort_keys=True)),
                "summary": self.summary,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, out_dir) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"{self.kind.replace(':', '_')}_report.json")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())
        return path

    def curve(self, key: str, metric: str) -> tuple:
        """Grid values and one metric, sorted by grid value."""
        pts = sorted((r["grid"][key], r[metric]) for r in self.records)
        return np.array([x for x, _ in pts]), np.array([y for _, y in pts])


REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema", "kind", "provenance", "config", "records", "summary"],
    "properties": {
        "schema": {"const": "ldprec.report/1"},
        "kind": {"type": "string"},
        "provenance": {
            "type": "object",
            "required": ["config_hash", "seed"],
            "properties": {"config_hash": {"type": "string"}, "seed": {"type": "integer"}},
        },
        "config": {"type": "object"},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["config_hash", "grid", "epsilon1", "epsilon2"],
                "properties": {
                    "config_hash": {"type": "string"},
                    "grid": {"type": "object"},
                    "epsilon1": {"type": ["number", "string"]},
                    "epsilon2": {"type": ["number", "string"]},
                    "decoder_accuracy": {"type": "number"},
                    "clustering_utility": {"type": "number"},
                    "attack_success": {"type": "number"},
                    "success_rate": {"type": "number"},
                },
            },
        },
        "summary": {"type": "object"},
    },
}


def validate_report(doc: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` is not a valid report."""
    jsonschema.validate(doc, REPORT_SCHEMA)


# -- pipeline --------------------------------------------------------------


@contextmanager
def _stage(name: str, timings: dict):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


def _seeds(seed: int, n: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


class _Population:
    """The three labeled samples shared by every grid point of a run."""

    def __init__(self, config: ExperimentConfig):
        self.taxonomy = builtin_taxonomy(config.taxonomy)
        s_train, s_test, s_users, self.prr_seed = _seeds(config.seed, 4)
        kw = config.dataset_kwargs()
        self.train = generate_dataset(self.taxonomy, config.train_size, seed=s_train, **kw)
        self.test = generate_dataset(self.taxonomy, config.test_size, seed=s_test, **kw)
        self.users = generate_dataset(self.taxonomy, config.profile_count, seed=s_users, **kw)
        self.users_features = profile_features(self.users.labels, self.taxonomy)
        self._clean_clusters = {}

    def clean_clusters(self, K: int, seed: int, restarts: int):
        key = (K, seed, restarts)
        if key not in self._clean_clusters:
            self._clean_clusters[key] = kmeans(self.users_features, K, seed=seed, n_init=restarts).assignments
        return self._clean_clusters[key]

    def perturb(self, dataset, prefix, bloom, priv):
        client = ClientState(self.prr_seed)
        values = [self.taxonomy.values_of(row) for row in dataset.labels]
        ids = [f"{prefix}{i}" for i in range(len(values))]
        return perturb_many(client, ids, values, bloom, priv)


def _evaluate_point(config: ExperimentConfig, pop: _Population, grid: dict, timings: dict) -> dict:
    tax = pop.taxonomy
    with _stage("configure", timings):
        bloom = config.bloom()
        priv = config.privacy()
        b = budget(priv)
    with _stage("perturb", timings):
        X_train = pop.perturb(pop.train, "train-", bloom, priv)
        X_test = pop.perturb(pop.test, "test-", bloom, priv)
        X_users = pop.perturb(pop.users, "user-", bloom, priv)
    with _stage("train", timings):
        dec = ProfileDecoder(tax.class_counts, config.decoder(), random_state=config.seed)
        dec.fit(X_train, pop.train.labels)
    with _stage("evaluate", timings):
        pred_test = dec.predict(X_test)
        per_cat = {}
        for c, cat in enumerate(tax.categories):
            rep = classification_report(pop.test.labels[:, c], pred_test[:, c], tax.class_counts[c])
            per_cat[cat.name] = {
                "accuracy": rep.accuracy,
                "macro_f1": float(rep.f1.mean()),
                "f1": rep.f1.tolist(),
                "support": rep.support.tolist(),
            }
        accs = [v["accuracy"] for v in per_cat.values()]
        if config.attack_category is None:
            attack = float(np.mean(accs))
        else:
            attack = per_cat[config.attack_category]["accuracy"]
    with _stage("cluster", timings):
        decoded = dec.predict(X_users)
        K = config.clusters
        clean = pop.clean_clusters(K, config.seed, config.kmeans_restarts)
        noisy = kmeans(profile_features(decoded, tax), K, seed=config.seed, n_init=config.kmeans_restarts)
        utility = matched_accuracy(clean, noisy.assignments, K)
        profile_match = float((decoded == pop.users.labels).all(axis=1).mean())
    return {
        "config_hash": config.config_hash(),
        "grid": grid,
        "m": bloom.m,
        "k": bloom.k,
        "f": priv.f,
        "p": priv.p,
        "q": priv.q,
        "epsilon1": b.epsilon1,
        "epsilon2": b.epsilon2,
        "p_prime": b.p_prime,
        "q_prime": b.q_prime,
        "decoder": per_cat,
        "decoder_accuracy": float(np.mean(accs)),
        "attack_success": attack,
        "privacy": 1.0 - attack,
        "clustering_utility": utility,
        "profile_match_rate": profile_match,
    }


def run_pipeline(config: ExperimentConfig) -> ExperimentReport:
    """Generate, perturb, decode and cluster once; one record."""
    timings = {}
    with _stage("generate", timings):
        pop = _Population(config)
    grid = {"epsilon": config.epsilon} if config.epsilon is not None else {"f": config.f}
    rec = _evaluate_point(config, pop, grid, timings)
    return ExperimentReport(
        kind="pipeline",
        config=config.to_dict(),
        config_hash=config.config_hash(),
        seed=config.seed,
        records=[rec],
        summary={
            "clustering_utility": rec["clustering_utility"],
            "decoder_accuracy": rec["decoder_accuracy"],
        },
        timings=timings,
    )


_SWEEPS = {
    "epsilon": ("epsilons", "epsilon"),
    "bloom_size": ("bloom_sizes", "bloom_size"),
    "hash_count": ("hash_counts", "hash_count"),
}


def run_sweep(config: ExperimentConfig, sweep: str) -> ExperimentReport:
    """One pipeline evaluation per grid value over a shared population."""
    if sweep not in _SWEEPS:
        raise ValueError(f"unknown sweep {sweep!r}; expected one of {sorted(_SWEEPS)}")
    grid_attr, field_name = _SWEEPS[sweep]
    values = getattr(config, grid_attr)
    if not values:
        raise ValueError(f"grid {grid_attr} is empty")
    timings = {}
    with _stage("generate", timings):
        pop = _Population(config)
    records = []
    for v in values:
        overrides = {field_name: v}
        if sweep == "epsilon":
            overrides["f"] = None
        if sweep == "bloom_size":
            overrides["false_positive_rate"] = None
        point = replace(config, **overrides)
        records.append(_evaluate_point(point, pop, {sweep: v}, timings))
    return ExperimentReport(
        kind=f"sweep:{sweep}",
        config=config.to_dict(),
        config_hash=config.config_hash(),
        seed=config.seed,
        records=records,
        timings=timings,
    )


def find_intersection(x, y_up, y_down) -> Optional[tuple]:
    """First crossing of two sampled curves by linear interpolation.

    Returns ``(x*, y*)`` or ``None`` when the curves never cross.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(y_up, dtype=float) - np.asarray(y_down, dtype=float)
    for i in range(len(x)):
        if d[i] == 0:
            return float(x[i]), float(y_up[i])
        if i + 1 < len(x) and d[i] * d[i + 1] < 0:
            t = d[i] / (d[i] - d[i + 1])
            xs = x[i] + t * (x[i + 1] - x[i])
            ys = y_up[i] + t * (y_up[i + 1] - y_up[i])
            return float(xs), float(ys)
    return None


def run_tradeoff(config: ExperimentConfig) -> ExperimentReport:
    """Utility and privacy curves over ``tradeoff_epsilons`` and their crossing."""
    eps = sorted(config.tradeoff_epsilons)
    if not eps:
        raise ValueError("tradeoff_epsilons is empty")
    sweep = run_sweep(replace(config, epsilons=tuple(eps)), "epsilon")
    x, utility = sweep.curve("epsilon", "clustering_utility")
    _, privacy = sweep.curve("epsilon", "privacy")
    cross = find_intersection(x, utility, privacy)
    summary = {"intersection": "no intersection"}
    if cross is not None:
        e_star = cross[0]
        summary = {
            "intersection": {
                "epsilon": e_star,
                "utility": float(np.interp(e_star, x, utility)),
                "privacy": float(np.interp(e_star, x, privacy)),
            }
        }
    return ExperimentReport(
        kind="tradeoff",
        config=config.to_dict(),
        config_hash=config.config_hash(),
        seed=config.seed,
        records=sweep.records,
        summary=summary,
        timings=sweep.timings,
    )


def run_basic_grid(config: ExperimentConfig, epsilons: Sequence[float], ks: Sequence[int]) -> ExperimentReport:
    """Basic-adversary success over an ``(epsilon, k)`` grid, universe = all classes."""
    tax = builtin_taxonomy(config.taxonomy)
    records = []
    timings = {}
    seeds = _seeds(config.seed, len(epsilons) * len(ks))
    for i, (e, k) in enumerate((e, k) for e in epsilons for k in ks):
        point = replace(config, epsilon=e, f=None, hash_count=k)
        with _stage("attack", timings):
            priv = point.privacy()
            setup = AttackSetup(tax.universe(), point.bloom(), priv)
            res = run_basic_game(setup, config.attack_trials, seed=seeds[i])
        b = budget(priv)
        records.append(
            {
                "config_hash": config.config_hash(),
                "grid": {"epsilon": e, "k": k},
                "epsilon1": b.epsilon1,
                "epsilon2": b.epsilon2,
                "trials": res.trials,
                "successes": res.successes,
                "success_rate": res.success_rate,
            }
        )
    return ExperimentReport(
        kind="attack:basic",
        config=config.to_dict(),
        config_hash=config.config_hash(),
        seed=config.seed,
        records=records,
        timings=timings,
    )


def write_curve_csv(report: ExperimentReport, path, columns: Sequence[str]) -> None:
    """Flat CSV of grid keys followed by the requested record columns."""
    rows = report.to_dict()["records"]
    keys = sorted({k for r in rows for k in r["grid"]})
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*keys, *columns])
        for r in rows:
            w.writerow([*(r["grid"].get(k) for k in keys), *(r.get(c) for c in columns)])
