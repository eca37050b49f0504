"""Privacy games against the perturbed reports.

* basic adversary: Bayesian guess of a single encoded preference;
* advanced adversary: a trained decoder guessing one category of full profiles;
* averaging: many reports of one client averaged bit by bit.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ._validation import check_bit_matrix, check_rng
from .bloom import BloomParams, encode
from .decoder import ClassificationReport, MlpConfig, classification_report
from .perturbation import (
    ClientState,
    PrivacyParams,
    budget,
    irr,
    perturb_many,
    perturb_reports,
    preference_digest,
    prr,
)
from .profiles import Taxonomy, generate_dataset

__all__ = [
    "AttackSetup",
    "AttackResult",
    "AveragingResult",
    "single_bit_flip_prob",
    "bayes_guess",
    "run_basic_game",
    "run_advanced_game",
    "run_averaging_game",
    "write_attack_grid_csv",
    "write_confusion_csv",
]

_LOG_FLOOR = 1e-300


def single_bit_flip_prob(epsilon: float, delta: int, original_bit: int) -> float:
    """Probability that a perturbed bit reads 1 under the ``epsilon / 2 delta`` model."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if delta < 1:
        raise ValueError("delta must be a positive integer")
    e = math.exp(epsilon / (2.0 * delta))
    return e / (e + 1.0) if original_bit else 1.0 / (e + 1.0)


@dataclass
class AttackSetup:
    """What the basic adversary knows: candidate values, filter layout and noise.

    ``model`` selects the adversary's per-bit likelihood: ``"channel"`` uses
    the exact two-round probabilities, ``"flip"`` uses
    :func:`single_bit_flip_prob` with ``delta = k`` at budget ``epsilon``
    (the permanent-round budget when left unset).
    """

    universe: Sequence[str]
    bloom: BloomParams
    priv: PrivacyParams
    prior: Optional[np.ndarray] = None
    model: str = "channel"
    epsilon: Optional[float] = None

    def __post_init__(self):
        self.universe = list(self.universe)
        if len(self.universe) < 2:
            raise ValueError("the universe needs at least two values")
        if self.prior is None:
            self.prior = np.full(len(self.universe), 1.0 / len(self.universe))
        self.prior = np.asarray(self.prior, dtype=float)
        if self.prior.shape != (len(self.universe),) or (self.prior < 0).any():
            raise ValueError("prior must be a nonnegative vector over the universe")
        if not np.isclose(self.prior.sum(), 1.0, atol=1e-9):
            raise ValueError("prior must sum to 1")
        if self.model not in ("channel", "flip"):
            raise ValueError(f"unknown likelihood model {self.model!r}")
        self.encodings = np.vstack([encode(v, self.bloom) for v in self.universe])

    def bit_probs(self) -> tuple:
        """Probability of observing 1 for a clean 0 bit and a clean 1 bit."""
        if self.model == "channel":
            b = budget(self.priv)
            return b.p_prime, b.q_prime
        eps = self.epsilon if self.epsilon is not None else budget(self.priv).epsilon1
        return (
            single_bit_flip_prob(eps, self.priv.k, 0),
            single_bit_flip_prob(eps, self.priv.k, 1),
        )


@dataclass
class AttackResult:
    trials: int
    successes: int
    log: list = field(default_factory=list, repr=False)

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


def _log_posteriors(setup: AttackSetup, observed: np.ndarray) -> np.ndarray:
    c0, c1 = setup.bit_probs()
    lp1 = np.log(np.clip([c0, c1], _LOG_FLOOR, 1.0))
    lp0 = np.log(np.clip([1.0 - c0, 1.0 - c1], _LOG_FLOOR, 1.0))
    # Work from overlap counts, which float products of 0/1 matrices give
    # exactly; candidates the channel cannot tell apart then tie exactly and
    # the lowest index wins.
    E = setup.encodings.astype(np.float64)
    S = observed.astype(np.float64)
    ones_on = S @ E.T  # observed 1 where the candidate's bit is set
    zeros_on = E.sum(axis=1)[np.newaxis, :] - ones_on
    n_ones = S.sum(axis=1, keepdims=True)
    n_zeros = S.shape[1] - n_ones
    loglik = (
        n_ones * lp1[0]
        + n_zeros * lp0[0]
        + ones_on * (lp1[1] - lp1[0])
        + zeros_on * (lp0[1] - lp0[0])
    )
    with np.errstate(divide="ignore"):
        log_joint = loglik + np.log(setup.prior)
    norm = logsumexp(log_joint, axis=1, keepdims=True)
    if not np.isfinite(norm).all():
        raise ValueError("every candidate has zero likelihood")
    return log_joint - norm


def bayes_guess(setup: AttackSetup, observed) -> tuple:
    """Maximum-a-posteriori value and the posterior over the universe.

    Works in the log domain. Ties go to the lowest universe index.
    """
    obs = check_bit_matrix(observed, setup.bloom.m)
    post = np.exp(_log_posteriors(setup, obs)[0])
    idx = int(np.argmax(post))
    return setup.universe[idx], post


def run_basic_game(setup: AttackSetup, trials: int, seed=0) -> AttackResult:
    """Challenger encodes one value per trial through both rounds; adversary guesses."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = check_rng(seed)
    truth = rng.choice(len(setup.universe), size=trials, p=setup.prior)
    clean = setup.encodings[truth]
    reports = irr(prr(clean, setup.priv.f, rng), setup.priv.p, setup.priv.q, rng)
    guesses = np.empty(trials, dtype=np.int64)
    chunk = 4096
    for s in range(0, trials, chunk):
        guesses[s : s + chunk] = np.argmax(_log_posteriors(setup, reports[s : s + chunk]), axis=1)
    log = [(setup.universe[g], setup.universe[t]) for g, t in zip(guesses, truth)]
    return AttackResult(trials=trials, successes=int((guesses == truth).sum()), log=log)


def _perturb_labels(taxonomy, labels, bloom, priv, seed, prefix):
    client = ClientState(seed)
    values = [taxonomy.values_of(row) for row in labels]
    ids = [f"{prefix}{i}" for i in range(len(values))]
    return perturb_many(client, ids, values, bloom, priv)


def run_advanced_game(
    taxonomy: Taxonomy,
    category,
    train_size: int,
    test_size: int,
    priv: PrivacyParams,
    bloom: BloomParams,
    decoder_config: Optional[MlpConfig] = None,
    seed: int = 0,
    dataset_kwargs: Optional[dict] = None,
    estimator=None,
) -> tuple:
    """Train a decoder on labeled perturbed profiles and attack fresh ones.

    ``category`` is a name or index. Training and challenge profiles come from
    :func:`generate_dataset` with independent seeds and ``dataset_kwargs``.
    Returns the attack result (success = correct label) and the full
    classification report.
    """
    if train_size < 1 or test_size < 1:
        raise ValueError("train_size and test_size must be at least 1")
    c = taxonomy.category_index(category) if isinstance(category, str) else int(category)
    kwargs = dict(dataset_kwargs or {})
    ss = np.random.SeedSequence(seed)
    s_train, s_test, s_prr_train, s_prr_test = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    train_ds = generate_dataset(taxonomy, train_size, seed=s_train, **kwargs)
    test_ds = generate_dataset(taxonomy, test_size, seed=s_test, **kwargs)
    X_train = _perturb_labels(taxonomy, train_ds.labels, bloom, priv, s_prr_train, "train-")
    X_test = _perturb_labels(taxonomy, test_ds.labels, bloom, priv, s_prr_test, "test-")

    n_classes = taxonomy.class_counts[c]
    if estimator is None:
        cfg = decoder_config or MlpConfig(input_size=bloom.m, output_size=n_classes, seed=seed)
        estimator = cfg.estimator().set_params(n_classes=n_classes)
    model = estimator.fit(X_train, train_ds.labels[:, c])
    pred = model.predict(X_test)
    truth = test_ds.labels[:, c]
    report = classification_report(truth, pred, n_classes)
    names = taxonomy.categories[c].classes
    log = [(names[int(g)], names[int(t)]) for g, t in zip(pred, truth)]
    result = AttackResult(trials=test_size, successes=int((pred == truth).sum()), log=log)
    return result, report


@dataclass
class AveragingResult:
    means: np.ndarray
    estimate: np.ndarray
    clean: np.ndarray
    permanent: np.ndarray
    threshold: float

    @property
    def hamming_to_clean(self) -> int:
        return int((self.estimate != self.clean).sum())

    @property
    def hamming_to_permanent(self) -> int:
        return int((self.estimate != self.permanent).sum())

    @property
    def recovered_permanent(self) -> bool:
        return self.hamming_to_permanent == 0

    @property
    def recovered_clean(self) -> bool:
        return self.hamming_to_clean == 0

    @property
    def verdict(self) -> str:
        if self.recovered_clean:
            return "clean filter recovered"
        if self.hamming_to_permanent <= self.hamming_to_clean:
            return "converged to permanent vector; clean filter hidden"
        return "inconclusive"


def run_averaging_game(
    client_values,
    priv: PrivacyParams,
    bloom: BloomParams,
    observations: int,
    seed=0,
    client_id: str = "victim",
) -> AveragingResult:
    """Average ``observations`` reports of one client and threshold each bit."""
    if observations < 1:
        raise ValueError("observations must be at least 1")
    client = ClientState(seed)
    reports = perturb_reports(client, client_id, client_values, bloom, priv, observations)
    means = reports.mean(axis=0)
    b = budget(priv)
    threshold = (b.p_prime + b.q_prime) / 2.0
    estimate = (means > threshold).astype(np.uint8)
    clean = encode(client_values, bloom)
    permanent = client.lookup(client_id, preference_digest(client_values, bloom))
    return AveragingResult(means, estimate, clean, permanent, threshold)


def write_attack_grid_csv(rows: Sequence[dict], path) -> None:
    """Rows need ``epsilon``, ``k``, ``trials``, ``successes``."""
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "k", "trials", "successes", "success_rate"])
        for r in sorted(rows, key=lambda r: (r["epsilon"], r["k"])):
            w.writerow([r["epsilon"], r["k"], r["trials"], r["successes"], r["successes"] / r["trials"]])


def write_confusion_csv(report: ClassificationReport, path, class_names: Optional[Sequence[str]] = None) -> None:
    n = report.confusion.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(n)]
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\predicted", *names])
        for name, row in zip(names, report.confusion):
            w.writerow([name, *row.tolist()])
