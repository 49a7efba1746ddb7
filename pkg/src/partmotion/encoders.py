"""Fixed (non-learned) encoders: hashed bag-of-words text and sinusoidal steps."""
from __future__ import annotations

import hashlib
import re
from typing import Callable, Protocol

import numpy as np

TEXT_DIM = 64
_TOKEN = re.compile(r"[a-z0-9']+")


class TextEncoder(Protocol):
    dim: int

    def __call__(self, text: str) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _bucket(token: str, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode(), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return h % dim, (1.0 if (h >> 63) & 1 else -1.0)


def text_encode(text: str, dim: int = TEXT_DIM) -> np.ndarray:
    """Signed feature hashing of unigrams and bigrams, L2-normalised.

    Empty (or token-free) text maps to the zero vector.
    """
    tokens = tokenize(text)
    vec = np.zeros(dim)
    feats = tokens + [a + "_" + b for a, b in zip(tokens, tokens[1:])]
    for tok in feats:
        i, sign = _bucket(tok, dim)
        vec[i] += sign
    norm = np.linalg.norm(vec)
    # hash collisions can cancel every feature
    return vec / norm if norm > 0 else vec


class HashedTextEncoder:
    def __init__(self, dim: int = TEXT_DIM):
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        return text_encode(text, self.dim)


def as_encoder(fn: Callable[[str], np.ndarray] | None, dim: int) -> TextEncoder:
    return HashedTextEncoder(dim) if fn is None else fn


def sinusoidal(positions, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Interleaved sin/cos embedding, one row per position."""
    positions = np.atleast_1d(np.asarray(positions, dtype=np.float64))
    half = (dim + 1) // 2
    freqs = max_period ** (-np.arange(half) / max(half, 1))
    ang = positions[:, None] * freqs[None, :]
    out = np.empty((positions.size, 2 * half))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out[:, :dim]


def time_embed(t, num_steps: int, dim: int) -> np.ndarray:
    t_arr = np.atleast_1d(np.asarray(t))
    if np.any(t_arr < 1) or np.any(t_arr > num_steps):
        raise ValueError(f"step outside [1, {num_steps}]")
    emb = sinusoidal(t_arr, dim)
    return emb[0] if np.ndim(t) == 0 else emb
