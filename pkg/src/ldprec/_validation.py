"""Input validation shared across modules."""
from __future__ import annotations

import hashlib
import math
from typing import Optional

import numpy as np


def check_bitvector(bv, length: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(bv)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"expected a nonempty 1-D bit vector, got shape {arr.shape}")
    if length is not None and arr.size != length:
        raise ValueError(f"bit vector has length {arr.size}, expected {length}")
    if arr.dtype != np.uint8:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("bit vectors may only contain 0 and 1")
        arr = arr.astype(np.uint8)
    elif arr.max(initial=0) > 1:
        raise ValueError("bit vectors may only contain 0 and 1")
    return arr


def check_bit_matrix(X, n_features: Optional[int] = None) -> np.ndarray:
    """Validate a 2-D array of bit vectors (one row each)."""
    arr = np.asarray(X)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"expected a nonempty 2-D array of bit vectors, got shape {arr.shape}")
    if n_features is not None and arr.shape[1] != n_features:
        raise ValueError(f"bit vectors have length {arr.shape[1]}, expected {n_features}")
    return arr


def check_probability(x: float, name: str) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return x


def check_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def stable_id(text: str) -> int:
    """Platform-independent 64-bit integer for a string key."""
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Generator keyed by ``(seed, *keys)``; independent of call order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & ((1 << 64) - 1), *keys]))
