"""Acceptance criteria, one test per criterion item.

Each test records a PASS/FAIL line; the lines are printed in the pytest
terminal summary, or directly when this file is run as a script.
Thresholds are the stated ones and are not adjusted to the outcome.
"""
import itertools
import math
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import spearmanr

from ldprec.attacks import AttackSetup, run_advanced_game, run_averaging_game, run_basic_game, single_bit_flip_prob
from ldprec.bloom import BloomParams, encode, optimal_k, optimal_m
from ldprec.clustering import kmeans, matched_accuracy
from ldprec.decoder import MLPDecoder
from ldprec.experiment import ExperimentConfig, run_pipeline, run_sweep, run_tradeoff
from ldprec.perturbation import PrivacyParams, budget, channel_probs, epsilon1_of_f, epsilon2_of, irr, prr
from ldprec.profiles import builtin_taxonomy, generate_dataset

RESULTS = {}

TAX = builtin_taxonomy("preference")
BLOOM = BloomParams(m=144, k=3, n=27)
SEEDS = (0, 1, 2)
UTILITY_GRID = (0.1, 0.4, 0.8, 1.2, 2.0)
PRIVACY_GRID = ExperimentConfig().tradeoff_epsilons
BASIC_EPS = (0.1, 0.25, 0.4, 0.55, 0.7, 0.85)
BASIC_KS = (3, 5, 7, 9)


def record(key, title, ok, detail):
    RESULTS[key] = f"[{'PASS' if ok else 'FAIL'}] {key} {title}: {detail}"
    print(RESULTS[key])
    assert ok, RESULTS[key]


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# -- 1 ---------------------------------------------------------------------


def test_c1_formulas():
    with Timer() as t:
        checks = {
            "optimal_m(27,0.1)=130": optimal_m(27, 0.1) == 130,
            "optimal_k(144,27)=4": optimal_k(144, 27) == 4,
            "eps1(0.5,2)=2ln3": abs(epsilon1_of_f(0.5, 2) - 2 * math.log(3)) < 1e-12,
            "channel(0.5,0.5,0.75)": np.allclose(channel_probs(0.5, 0.5, 0.75), (0.5625, 0.6875), rtol=0, atol=1e-15),
            # oracle: the closed form 2 ln(q'(1-p') / (p'(1-q'))) at the values above
            "eps2 closed form": abs(epsilon2_of(0.5, 0.5, 0.75, 2) - 2 * math.log((0.6875 * 0.4375) / (0.5625 * 0.3125))) < 1e-9,
        }
        rng = np.random.default_rng(0)
        checks["flip branches complementary"] = all(
            abs(single_bit_flip_prob(e, d, 1) + single_bit_flip_prob(e, d, 0) - 1) < 1e-12
            for e, d in zip(rng.uniform(1e-3, 10, 100), rng.integers(1, 30, 100))
        )
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and t.elapsed < 1.0
    record("C1", "formula unit suite", ok, f"{len(checks) - len(failed)}/{len(checks)} exact checks in {t.elapsed:.3f}s"
           + (f"; failed {failed}" if failed else "")
           + f"; eps2={epsilon2_of(0.5, 0.5, 0.75, 2):.10f}")


# -- 2 ---------------------------------------------------------------------


def test_c2_stochastic_channel():
    with Timer() as t:
        rng = np.random.default_rng(2)
        n = 100_000
        devs = []
        for f in (0.0, 0.25, 0.5, 1.0):
            for bit in (0, 1):
                out = prr(np.full(n, bit, dtype=np.uint8), f, rng)
                devs.append(abs(out.mean() - (f / 2 + (1 - f) * bit)))
        for p, q in ((0.5, 0.75), (0.25, 0.9), (0.0, 1.0)):
            for bit in (0, 1):
                out = irr(np.full(n, bit, dtype=np.uint8), p, q, rng)
                devs.append(abs(out.mean() - (q if bit else p)))
        priv = PrivacyParams(f=0.5, p=0.5, q=0.75, k=2)
        bound = math.exp(budget(priv).epsilon2 / priv.k)
        trials = 1_000_000
        x = irr(prr(np.ones(trials, dtype=np.uint8), priv.f, rng), priv.p, priv.q, rng)
        y = irr(prr(np.zeros(trials, dtype=np.uint8), priv.f, rng), priv.p, priv.q, rng)
        ratios = []
        for s in (0, 1):
            px, py = np.mean(x == s), np.mean(y == s)
            ratios += [px / py, py / px]
    ok = max(devs) <= 0.005 and max(ratios) <= bound + 0.01 and t.elapsed < 30
    record("C2", "stochastic channel suite", ok,
           f"max freq deviation {max(devs):.4f} (<=0.005); max ratio {max(ratios):.4f} vs e^(eps2/k)={bound:.4f}; {t.elapsed:.1f}s")


# -- 3 ---------------------------------------------------------------------


def _grad_rel_err(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, (12, 9)).astype(float)
    Y = np.eye(4)[rng.integers(0, 4, 12)]
    model = MLPDecoder(hidden_sizes=(7, 5))
    params = [p + rng.normal(0, 0.1, p.shape) for p in model._init_params(9, 4, rng)]
    _, grads = model._loss_and_grads(params, X, Y)
    errs = []
    for _ in range(10):
        i = int(rng.integers(len(params)))
        j = tuple(int(rng.integers(s)) for s in params[i].shape)
        old = params[i][j]
        params[i][j] = old + 1e-6
        up, _ = model._loss_and_grads(params, X, Y)
        params[i][j] = old - 1e-6
        down, _ = model._loss_and_grads(params, X, Y)
        params[i][j] = old
        num = (up - down) / 2e-6
        errs.append(abs(num - grads[i][j]) / max(abs(num) + abs(grads[i][j]), 1e-12))
    return max(errs)


def test_c3_decoder():
    with Timer() as t:
        grad = max(_grad_rel_err(s) for s in range(3))
        train_ds = generate_dataset(TAX, 5000, seed=21)
        test_ds = generate_dataset(TAX, 2000, seed=22)
        X = np.vstack([encode(TAX.values_of(r), BLOOM) for r in train_ds.labels])
        X_test = np.vstack([encode(TAX.values_of(r), BLOOM) for r in test_ds.labels])
        clean = MLPDecoder(n_classes=8).fit(X, train_ds.labels[:, 1])
        acc_clean = float((clean.predict(X_test) == test_ds.labels[:, 1]).mean())
        shuffled_y = np.random.default_rng(0).permutation(train_ds.labels[:, 1])
        shuffled = MLPDecoder(n_classes=8, random_state=1).fit(X, shuffled_y)
        acc_shuffled = float((shuffled.predict(X_test) == test_ds.labels[:, 1]).mean())
        twin = MLPDecoder(n_classes=8).fit(X, train_ds.labels[:, 1])
        same = all(np.array_equal(a, b) for a, b in zip(clean.coefs_ + clean.intercepts_, twin.coefs_ + twin.intercepts_))
    ok = grad < 1e-4 and acc_clean >= 0.99 and abs(acc_shuffled - 1 / 8) <= 0.03 and same and t.elapsed < 120
    record("C3", "decoder suite", ok,
           f"grad rel-err {grad:.2e}; noiseless acc {acc_clean:.4f}; shuffled acc {acc_shuffled:.4f} (1/8+-0.03); "
           f"bit-exact refit {same}; {t.elapsed:.1f}s")


# -- 4 ---------------------------------------------------------------------


def test_c4_clustering():
    with Timer() as t:
        rng = np.random.default_rng(4)
        monotone = True
        for seed in range(20):
            X = rng.normal(size=(400, 5))
            hist = np.array(kmeans(X, 6, seed=seed).wcss_history)
            monotone &= bool(np.all(np.diff(hist) <= 1e-9 * hist[:-1]))
        invariant = True
        for _ in range(50):
            K = int(rng.integers(2, 7))
            ref = rng.integers(0, K, 80)
            test = np.where(rng.random(80) < 0.6, ref, rng.integers(0, K, 80))
            base = matched_accuracy(ref, test, K)
            invariant &= matched_accuracy(rng.permutation(K)[ref], rng.permutation(K)[test], K) == base
            invariant &= matched_accuracy(ref, rng.permutation(K)[ref], K) == 1.0
        agree = 0
        for _ in range(100):
            K = int(rng.integers(1, 5))
            n = int(rng.integers(1, 13))
            ref, test = rng.integers(0, K, n), rng.integers(0, K, n)
            brute = max(sum(perm[b] == a for a, b in zip(ref, test)) for perm in itertools.permutations(range(K))) / n
            agree += abs(matched_accuracy(ref, test, K) - brute) < 1e-15
    ok = monotone and invariant and agree == 100 and t.elapsed < 60
    record("C4", "clustering suite", ok,
           f"WCSS monotone {monotone}; permutation invariant {invariant}; brute-force agreement {agree}/100; {t.elapsed:.1f}s")


# -- 5 ---------------------------------------------------------------------


def test_c5a_clustering_utility():
    with Timer() as t:
        u = {e: run_pipeline(ExperimentConfig(epsilon=e)).records[0]["clustering_utility"] for e in (0.8, 2.0)}
    ok = u[0.8] >= 0.80 and u[2.0] >= 0.70 and t.elapsed < 600
    record("C5a", "clustering utility at desk scale", ok,
           f"eps=0.8 -> {u[0.8]:.3f} (>=0.80), eps=2.0 -> {u[2.0]:.3f} (>=0.70); {t.elapsed:.1f}s")


def test_c5b_advanced_adversary():
    cfg = ExperimentConfig()
    rates = {}
    with Timer() as t:
        for e in (0.1, 2.4):
            point = replace(cfg, epsilon=e)
            res, _ = run_advanced_game(TAX, "music", cfg.train_size, cfg.test_size, point.privacy(), point.bloom(),
                                       seed=cfg.seed, dataset_kwargs=cfg.dataset_kwargs(), estimator=cfg.decoder())
            rates[e] = res.success_rate
    ok = abs(rates[0.1] - 0.29) <= 0.10 and abs(rates[2.4] - 0.52) <= 0.10 and t.elapsed < 600
    record("C5b", "advanced adversary, music", ok,
           f"eps=0.1 -> {rates[0.1]:.3f} (0.29+-0.10), eps=2.4 -> {rates[2.4]:.3f} (0.52+-0.10); {t.elapsed:.1f}s")


def test_c5c_basic_adversary_mean():
    with Timer() as t:
        rates = [
            run_basic_game(AttackSetup(TAX.universe(), BLOOM, PrivacyParams.from_epsilon(e, 3)), 10_000, seed=i).success_rate
            for i, e in enumerate(BASIC_EPS)
        ]
    mean = float(np.mean(rates))
    ok = mean <= 0.25 and t.elapsed < 600
    record("C5c", "basic adversary mean success, k=3", ok,
           f"mean {mean:.4f} (<=0.25) over eps {BASIC_EPS}; {t.elapsed:.1f}s")


def test_c5d_tradeoff_intersection():
    with Timer() as t:
        rep = run_tradeoff(ExperimentConfig(hash_count=15, clusters=5))
    cross = rep.summary["intersection"]
    if cross == "no intersection":
        ok = False
        _, u = rep.curve("epsilon", "clustering_utility")
        _, p = rep.curve("epsilon", "privacy")
        detail = f"no intersection; utility {u.min():.3f}..{u.max():.3f}, privacy {p.min():.3f}..{p.max():.3f}"
    else:
        ok = 0.3 <= cross["epsilon"] <= 0.9 and all(0.7 <= cross[k] <= 0.9 for k in ("utility", "privacy"))
        detail = f"eps*={cross['epsilon']:.3f}, utility {cross['utility']:.3f}, privacy {cross['privacy']:.3f}"
    ok = ok and t.elapsed < 600
    record("C5d", "trade-off intersection (k=15, K=5)", ok, f"{detail}; {t.elapsed:.1f}s")


# -- 6 ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def epsilon_curves():
    grid = tuple(sorted(set(UTILITY_GRID) | set(PRIVACY_GRID)))
    util, priv = [], []
    for s in SEEDS:
        rep = run_sweep(ExperimentConfig(seed=s, epsilons=grid), "epsilon")
        x, u = rep.curve("epsilon", "clustering_utility")
        _, p = rep.curve("epsilon", "privacy")
        util.append(dict(zip(x, u)))
        priv.append(dict(zip(x, p)))
    return util, priv


def test_c6a_utility_increasing(epsilon_curves):
    util, _ = epsilon_curves
    mean = [np.mean([u[e] for u in util]) for e in UTILITY_GRID]
    rho = spearmanr(UTILITY_GRID, mean)[0]
    record("C6a", "utility increasing in eps", rho >= 0.8,
           f"Spearman {rho:.3f} (>=0.8) over {UTILITY_GRID}, seed-averaged utility {np.round(mean, 3).tolist()}")


def test_c6b_privacy_decreasing(epsilon_curves):
    _, priv = epsilon_curves
    mean = [np.mean([p[e] for p in priv]) for e in PRIVACY_GRID]
    rho = spearmanr(PRIVACY_GRID, mean)[0]
    record("C6b", "privacy decreasing in eps", rho <= -0.8,
           f"Spearman {rho:.3f} (<=-0.8) over {PRIVACY_GRID}, seed-averaged privacy {np.round(mean, 3).tolist()}")


def test_c6c_basic_attack_decreasing_in_k():
    eps = 0.85
    curves = []
    for s in SEEDS:
        curves.append([
            run_basic_game(AttackSetup(TAX.universe(), BloomParams(m=144, k=k, n=27), PrivacyParams.from_epsilon(eps, k)),
                           100_000, seed=s).success_rate
            for k in BASIC_KS
        ])
    mean = np.mean(curves, axis=0)
    rho = spearmanr(BASIC_KS, mean)[0]
    record("C6c", "basic attack decreasing in k", rho <= -0.8,
           f"Spearman {rho:.3f} (<=-0.8) at eps={eps}, k={BASIC_KS}, seed-averaged success {np.round(mean, 4).tolist()}")


# -- 7 ---------------------------------------------------------------------


def test_c7_averaging():
    priv = PrivacyParams(f=0.5, p=0.5, q=0.75, k=3)
    exact = run_averaging_game(TAX.values_of([0, 0, 0]), priv, BLOOM, 100_000, seed=0)
    closer = 0
    for s in range(100):
        labels = generate_dataset(TAX, 1, seed=1000 + s).labels[0]
        res = run_averaging_game(TAX.values_of(labels), priv, BLOOM, 10_000, seed=s, client_id=f"victim-{s}")
        closer += res.hamming_to_permanent < res.hamming_to_clean
    ok = exact.recovered_permanent and closer >= 99
    record("C7", "averaging attack", ok,
           f"N=1e5 estimate == B' {exact.recovered_permanent} (B vs B' differ in "
           f"{int((exact.clean != exact.permanent).sum())} bits); closer to B' in {closer}/100 runs (>=99)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
