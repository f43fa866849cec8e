"""Tokenizer and the default hashed term-frequency embedder."""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from typing import Protocol

import numpy as np

_SPLIT = re.compile(r"[^0-9a-z]+")

DEFAULT_DIM = 256


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop empties."""
    return [t for t in _SPLIT.split(text.lower()) if t]


def token_bucket(token: str, dim: int = DEFAULT_DIM) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


class Embedder(Protocol):
    dim: int

    def __call__(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Feature-hashed bag of words with (1 + ln tf) damping, L2-normalised.

    Bucket assignment uses blake2b so vectors are identical across processes.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for tok, tf in sorted(Counter(tokenize(text)).items()):
            v[token_bucket(tok, self.dim)] += 1.0 + math.log(tf)
        norm = float(np.sqrt(np.dot(v, v)))
        if norm > 0.0:
            v /= norm
        return v

    def __repr__(self) -> str:
        return f"HashingEmbedder(dim={self.dim})"


_default = HashingEmbedder()


def embed(text: str) -> np.ndarray:
    return _default(text)
