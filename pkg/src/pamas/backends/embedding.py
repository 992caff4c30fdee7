"""Deterministic text embedder based on seeded feature hashing."""

from __future__ import annotations

import hashlib
import re

import numpy as np

_TOKEN = re.compile(r"[a-z0-9_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class HashingEmbedder:
    def __init__(self, dim: int = 64, seed: int = 0, probes: int = 4):
        if dim < 2:
            raise ValueError("embedding dimension must be >= 2")
        self.dim = dim
        self.seed = seed
        self.probes = probes

    def __call__(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        tokens = tokenize(text) or [text.strip()]
        vec = np.zeros(self.dim)
        for token in tokens:
            digest = hashlib.blake2b(f"{self.seed}|{token}".encode(), digest_size=8 * self.probes).digest()
            for p in range(self.probes):
                chunk = int.from_bytes(digest[8 * p : 8 * p + 8], "little")
                index = chunk % self.dim
                # Magnitude in (0.5, 1.5] keeps collisions from cancelling exactly.
                magnitude = 0.5 + ((chunk >> 32) & 0xFFFF) / 65536.0
                sign = 1.0 if (chunk >> 63) & 1 else -1.0
                vec[index] += sign * magnitude
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ValueError(f"degenerate embedding for {text!r}")
        vec = vec / norm
        # One extra pass pins the norm at 1 to within a couple of ulps.
        return vec / np.linalg.norm(vec)
