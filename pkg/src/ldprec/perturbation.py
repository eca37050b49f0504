"""Two-round randomized response over Bloom filters and its privacy budgets.

The permanent round (PRR) is drawn once per client and preference set and
memoized in a :class:`ClientState`; every report then applies a fresh
instantaneous round (IRR) to that memoized vector.
"""
from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import (
    check_bit_matrix,
    check_bitvector,
    check_probability,
    check_rng,
    stable_id,
    substream,
)
from .bloom import BloomParams, bits_from_hex, bits_to_hex, encode

__all__ = [
    "PrivacyParams",
    "BudgetReport",
    "ClientState",
    "ReportRecord",
    "RandomizedResponse",
    "prr",
    "irr",
    "epsilon1_of_f",
    "f_of_epsilon1",
    "channel_probs",
    "epsilon2_of",
    "budget",
    "preference_digest",
    "perturb_report",
    "perturb_reports",
    "perturb_many",
]

DEFAULT_P = 0.5
DEFAULT_Q = 0.75


# -- budgets ---------------------------------------------------------------


def epsilon1_of_f(f: float, k: int) -> float:
    """Permanent-round budget ``k ln((1 - f/2) / (f/2))``; ``inf`` when ``f == 0``."""
    f = check_probability(f, "f")
    if k < 1:
        raise ValueError("k must be a positive integer")
    if f == 0.0:
        return math.inf
    return k * math.log((1.0 - f / 2.0) / (f / 2.0))


def f_of_epsilon1(epsilon: float, k: int) -> float:
    """Inverse of :func:`epsilon1_of_f`."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if k < 1:
        raise ValueError("k must be a positive integer")
    # 2 / (1 + e^x) written to stay finite for large x
    return 2.0 * math.exp(-epsilon / k) / (1.0 + math.exp(-epsilon / k))


def channel_probs(f: float, p: float, q: float) -> tuple:
    """Probabilities ``(p', q')`` that a reported bit is 1 given a clean 0 resp. 1.

    Both rounds composed: ``p' = (f/2) q + (1 - f/2) p`` and
    ``q' = (1 - f/2) q + (f/2) p``.
    """
    f = check_probability(f, "f")
    p = check_probability(p, "p")
    q = check_probability(q, "q")
    half = f / 2.0
    return half * q + (1.0 - half) * p, (1.0 - half) * q + half * p


def epsilon2_of(f: float, p: float, q: float, k: int) -> float:
    """Per-report budget ``k ln(q'(1-p') / (p'(1-q')))``."""
    p1, q1 = channel_probs(f, p, q)
    if q1 < p1:
        raise ValueError(f"invalid channel: q'={q1} < p'={p1}")
    if q1 == p1:
        return 0.0
    if p1 == 0.0 or q1 == 1.0:
        return math.inf
    return k * math.log(q1 * (1.0 - p1) / (p1 * (1.0 - q1)))


@dataclass(frozen=True)
class PrivacyParams:
    """Noise parameters of both rounds.

    ``p`` and ``q`` are the probabilities of reporting 1 for a permanent bit
    of 0 resp. 1. ``p == q`` is rejected unless ``allow_degenerate`` is set.
    """

    f: float
    p: float = DEFAULT_P
    q: float = DEFAULT_Q
    k: int = 3
    allow_degenerate: bool = False

    def __post_init__(self):
        check_probability(self.f, "f")
        check_probability(self.p, "p")
        check_probability(self.q, "q")
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.p > self.q or (self.p == self.q and not self.allow_degenerate):
            raise ValueError(f"need p < q, got p={self.p}, q={self.q}")

    @classmethod
    def from_epsilon(cls, epsilon: float, k: int, p: float = DEFAULT_P, q: float = DEFAULT_Q):
        """Read ``epsilon`` as the permanent-round budget and derive ``f``."""
        return cls(f=f_of_epsilon1(epsilon, k), p=p, q=q, k=k)

    @classmethod
    def noiseless(cls, k: int):
        return cls(f=0.0, p=0.0, q=1.0, k=k)

    def budget(self) -> "BudgetReport":
        return budget(self)


@dataclass(frozen=True)
class BudgetReport:
    epsilon1: float
    epsilon2: float
    p_prime: float
    q_prime: float


def budget(priv: PrivacyParams) -> BudgetReport:
    p1, q1 = channel_probs(priv.f, priv.p, priv.q)
    return BudgetReport(
        epsilon1=epsilon1_of_f(priv.f, priv.k),
        epsilon2=epsilon2_of(priv.f, priv.p, priv.q, priv.k),
        p_prime=p1,
        q_prime=q1,
    )


# -- mechanisms ------------------------------------------------------------


def prr(b, f: float, rng=None) -> np.ndarray:
    """Permanent randomized response; works row-wise on 2-D input too."""
    f = check_probability(f, "f")
    b = np.asarray(b, dtype=np.uint8)
    u = check_rng(rng).random(b.shape)
    out = np.where(u < f / 2.0, 1, np.where(u < f, 0, b)).astype(np.uint8)
    return out


def irr(b_prime, p: float, q: float, rng=None) -> np.ndarray:
    """Instantaneous randomized response with fresh randomness per call."""
    p = check_probability(p, "p")
    q = check_probability(q, "q")
    b_prime = np.asarray(b_prime, dtype=np.uint8)
    u = check_rng(rng).random(b_prime.shape)
    return (u < np.where(b_prime == 1, q, p)).astype(np.uint8)


class RandomizedResponse(TransformerMixin, BaseEstimator):
    """Stateless PRR followed by IRR over the rows of a bit matrix.

    Each row is treated as a distinct client seen once, so nothing is
    memoized; use :func:`perturb_report` for repeated reports.
    """

    def __init__(self, f=0.5, p=DEFAULT_P, q=DEFAULT_Q, random_state=None):
        self.f = f
        self.p = p
        self.q = q
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_bit_matrix(X)
        self.n_features_in_ = X.shape[1]
        self.rng_ = check_rng(self.random_state)
        return self

    def transform(self, X):
        X = check_bit_matrix(X, getattr(self, "n_features_in_", None))
        rng = getattr(self, "rng_", None) or check_rng(self.random_state)
        return irr(prr(X, self.f, rng), self.p, self.q, rng)


# -- client-side memo ------------------------------------------------------


def preference_digest(values: Iterable[str], bloom: BloomParams) -> str:
    """Order-independent digest of a preference set and the filter layout."""
    if isinstance(values, str):
        values = (values,)
    canon = "\x1f".join(sorted(set(values)))
    tag = f"{bloom.m}|{bloom.k}|{bloom.hash_seed}|{canon}"
    return hashlib.sha256(tag.encode("utf-8")).hexdigest()


class ClientState:
    """Memo of permanent vectors keyed by ``(client_id, preference digest)``.

    Entries are insert-once: a stored vector is never replaced. Session
    counters number each client's reports and key the IRR substreams.
    """

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self._memo = {}
        self._sessions = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._memo)

    def lookup(self, client_id: str, digest: str) -> Optional[np.ndarray]:
        return self._memo.get((client_id, digest))

    def permanent(self, client_id: str, digest: str, factory) -> np.ndarray:
        """Stored vector for the key, created by ``factory()`` on first use."""
        key = (client_id, digest)
        found = self._memo.get(key)
        if found is not None:
            return found
        with self._lock:
            found = self._memo.get(key)
            if found is None:
                found = factory()
                found.setflags(write=False)
                self._memo[key] = found
            return found

    def next_sessions(self, client_id: str, count: int = 1) -> int:
        """Reserve ``count`` session numbers; returns the first one."""
        with self._lock:
            start = self._sessions.get(client_id, 0)
            self._sessions[client_id] = start + count
            return start


def _permanent_vector(client, client_id, values, bloom, priv):
    if len(values) == 0:
        raise ValueError("cannot perturb an empty preference set")
    digest = preference_digest(values, bloom)

    def draw():
        rng = substream(client.rng_seed, 0, stable_id(client_id), int(digest[:16], 16))
        return prr(encode(values, bloom), priv.f, rng)

    return client.permanent(client_id, digest, draw)


def perturb_report(
    client: ClientState,
    client_id: str,
    values,
    bloom: BloomParams,
    priv: PrivacyParams,
) -> np.ndarray:
    """Encode, apply the memoized PRR, then a fresh IRR."""
    if isinstance(values, str):
        values = (values,)
    values = tuple(values)
    if priv.k != bloom.k:
        raise ValueError(f"privacy k={priv.k} does not match Bloom k={bloom.k}")
    b_prime = _permanent_vector(client, client_id, values, bloom, priv)
    session = client.next_sessions(client_id)
    rng = substream(client.rng_seed, 1, stable_id(client_id), session)
    return irr(b_prime, priv.p, priv.q, rng)


def perturb_reports(
    client: ClientState,
    client_id: str,
    values,
    bloom: BloomParams,
    priv: PrivacyParams,
    count: int,
) -> np.ndarray:
    """``count`` reports for one client in a single draw, shape ``(count, m)``.

    The batch reserves ``count`` session numbers and is keyed by the first.
    """
    if isinstance(values, str):
        values = (values,)
    values = tuple(values)
    if priv.k != bloom.k:
        raise ValueError(f"privacy k={priv.k} does not match Bloom k={bloom.k}")
    b_prime = _permanent_vector(client, client_id, values, bloom, priv)
    start = client.next_sessions(client_id, count)
    rng = substream(client.rng_seed, 2, stable_id(client_id), start, count)
    return irr(np.broadcast_to(b_prime, (count, bloom.m)), priv.p, priv.q, rng)


# -- report records --------------------------------------------------------


def _encode_float(x: float):
    return "inf" if math.isinf(x) else x


def _decode_float(x) -> float:
    return math.inf if x == "inf" else float(x)


@dataclass(frozen=True)
class ReportRecord:
    client_id: str
    bits: str
    m: int
    k: int
    f: float
    p: float
    q: float
    epsilon1: float
    epsilon2: float
    session_counter: int

    @classmethod
    def build(cls, client_id, bits, priv: PrivacyParams, session_counter: int):
        bits = check_bitvector(bits)
        b = budget(priv)
        return cls(
            client_id=str(client_id),
            bits=bits_to_hex(bits),
            m=int(bits.size),
            k=priv.k,
            f=priv.f,
            p=priv.p,
            q=priv.q,
            epsilon1=b.epsilon1,
            epsilon2=b.epsilon2,
            session_counter=int(session_counter),
        )

    def to_json(self) -> str:
        d = asdict(self)
        d["epsilon1"] = _encode_float(d["epsilon1"])
        d["epsilon2"] = _encode_float(d["epsilon2"])
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "ReportRecord":
        d = json.loads(line)
        d["epsilon1"] = _decode_float(d["epsilon1"])
        d["epsilon2"] = _decode_float(d["epsilon2"])
        return cls(**d)

    def bitvector(self) -> np.ndarray:
        bits = bits_from_hex(self.bits)
        if bits.size != self.m:
            raise ValueError(f"record length {bits.size} does not match m={self.m}")
        return bits


def perturb_many(
    client: ClientState,
    client_ids: Iterable[str],
    value_sets: Iterable,
    bloom: BloomParams,
    priv: PrivacyParams,
) -> np.ndarray:
    """One report per ``(client_id, values)`` pair, stacked into ``(n, m)``."""
    rows = [perturb_report(client, cid, values, bloom, priv) for cid, values in zip(client_ids, value_sets)]
    if not rows:
        return np.zeros((0, bloom.m), dtype=np.uint8)
    return np.vstack(rows)
