"""Bloom filter sizing, encoding and bit-vector serialization.

Bit vectors are plain 1-D ``uint8`` numpy arrays of zeros and ones. Arrays
returned by this module are marked read-only.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_bitvector

__all__ = [
    "BloomParams",
    "BloomEncoder",
    "optimal_m",
    "optimal_k",
    "hash_indices",
    "encode",
    "contains",
    "bits_to_hex",
    "bits_from_hex",
]

_MASK64 = (1 << 64) - 1

# Maps (value, params) -> indices; lets tests inject a fixed hash layout.
Hasher = Callable[[str, "BloomParams"], Iterable[int]]


def optimal_m(n: int, f_p: float) -> int:
    """Smallest bit count meeting false-positive rate ``f_p`` for ``n`` items."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    if not 0.0 < f_p < 1.0:
        raise ValueError("f_p must lie strictly between 0 and 1")
    return max(1, math.ceil(-n * math.log(f_p) / math.log(2) ** 2))


def optimal_k(m: int, n: int) -> int:
    """Hash count ``(m/n) ln 2`` rounded half-up, at least 1."""
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive integers")
    return max(1, math.floor(m / n * math.log(2) + 0.5))


@dataclass(frozen=True)
class BloomParams:
    m: int
    k: int
    n: int = 1
    f_p: float = 0.1
    hash_seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.k < 1 or self.n < 1:
            raise ValueError("m, k and n must be positive")
        if not 0.0 < self.f_p < 1.0:
            raise ValueError("f_p must lie strictly between 0 and 1")

    @classmethod
    def from_capacity(cls, n: int, f_p: float, hash_seed: int = 0, k: Optional[int] = None):
        """Size the filter for ``n`` items at rate ``f_p``; ``k`` overrides the optimum."""
        m = optimal_m(n, f_p)
        return cls(m=m, k=optimal_k(m, n) if k is None else k, n=n, f_p=f_p, hash_seed=hash_seed)


@lru_cache(maxsize=65536)
def _double_hash(value: str, hash_seed: int, m: int, k: int) -> tuple:
    key = (hash_seed & _MASK64).to_bytes(8, "little")
    digest = hashlib.blake2b(value.encode("utf-8"), digest_size=16, key=key).digest()
    h_a = int.from_bytes(digest[:8], "little")
    h_b = int.from_bytes(digest[8:], "little") | 1
    return tuple((h_a + i * h_b) % m for i in range(k))


def hash_indices(value: str, params: BloomParams) -> tuple:
    """The ``k`` bit positions of ``value`` (double hashing over blake2b)."""
    if not isinstance(value, str) or not value:
        raise ValueError("preference values must be nonempty strings")
    return _double_hash(value, params.hash_seed, params.m, params.k)


def _freeze(bits: np.ndarray) -> np.ndarray:
    bits.setflags(write=False)
    return bits


def encode(values: Iterable[str], params: BloomParams, hasher: Optional[Hasher] = None) -> np.ndarray:
    """Bloom filter of a set of preference values."""
    if isinstance(values, str):
        values = (values,)
    values = list(values)
    if not values:
        raise ValueError("cannot encode an empty preference set")
    bits = np.zeros(params.m, dtype=np.uint8)
    for v in values:
        if not isinstance(v, str) or not v:
            raise ValueError("preference values must be nonempty strings")
        idx = hash_indices(v, params) if hasher is None else hasher(v, params)
        bits[list(idx)] = 1
    return _freeze(bits)


def contains(bv, value: str, params: BloomParams, hasher: Optional[Hasher] = None) -> bool:
    bv = check_bitvector(bv, params.m)
    idx = hash_indices(value, params) if hasher is None else hasher(value, params)
    return bool(all(bv[i] for i in idx))


class BloomEncoder(TransformerMixin, BaseEstimator):
    """Encode preference sets into Bloom filters, one row per set.

    Parameters
    ----------
    m : int
        Filter length in bits.
    k : int
        Number of hash functions.
    hash_seed : int
        Seed shared by every client and the recommender.
    hasher : callable, optional
        Override for the index function, ``hasher(value, params)``.
    """

    def __init__(self, m=144, k=3, hash_seed=0, hasher=None):
        self.m = m
        self.k = k
        self.hash_seed = hash_seed
        self.hasher = hasher

    @property
    def params(self) -> BloomParams:
        return BloomParams(m=self.m, k=self.k, hash_seed=self.hash_seed)

    def fit(self, X=None, y=None):
        self.params_ = self.params
        self.n_features_out_ = self.m
        return self

    def transform(self, X) -> np.ndarray:
        params = getattr(self, "params_", None) or self.params
        rows = [encode(values, params, self.hasher) for values in X]
        if not rows:
            return np.zeros((0, params.m), dtype=np.uint8)
        return np.vstack(rows)


# -- serialization ---------------------------------------------------------


def bits_to_hex(bits) -> str:
    """``"<length>:<hex>"`` with bits packed LSB-first within each byte."""
    bits = check_bitvector(bits)
    packed = np.packbits(bits, bitorder="little")
    return f"{bits.size}:{packed.tobytes().hex()}"


def bits_from_hex(text: str) -> np.ndarray:
    try:
        length_s, hex_s = text.strip().split(":", 1)
        length = int(length_s)
        raw = bytes.fromhex(hex_s)
    except ValueError as exc:
        raise ValueError(f"malformed bit-vector string {text!r}") from exc
    if length < 1 or len(raw) != (length + 7) // 8:
        raise ValueError(f"length {length} does not match {len(raw)} packed bytes")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    if bits[length:].any():
        raise ValueError("nonzero padding bits")
    return _freeze(bits[:length].copy())
