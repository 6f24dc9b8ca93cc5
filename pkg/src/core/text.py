"""
Pluggable text encoder.

The denoiser condition and the evaluation feature extractor only need a
deterministic map from a sentence to a fixed-size vector. HashedTextEncoder
provides one without pretrained weights: every lower-cased word seeds a fixed
random Gaussian vector through a BLAKE2b hash, and a sentence is the
normalized sum of its word vectors.
"""

import hashlib
import re
from abc import ABC, abstractmethod
from typing import Dict, List, Sequence

import numpy as np

_WORD = re.compile(r"[a-z0-9]+")


class TextEncoder(ABC):
    """
    Maps text to a fixed-dimension float32 vector.
    """

    dim: int

    @abstractmethod
    def encode(self, text: str) -> np.ndarray:
        """Embed one sentence as a (dim,) vector."""

    def encode_batch(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self.encode(t) for t in texts]).astype(np.float32)


class HashedTextEncoder(TextEncoder):
    """
    Hashed bag-of-words embedding.

    Args:
        dim: Output dimension
        seed: Salt mixed into every word hash; different seeds give unrelated spaces

    Examples:
        >>> enc = HashedTextEncoder(dim=16)
        >>> np.allclose(enc.encode("Two people wave"), enc.encode("two people wave"))
        True
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self._cache: Dict[str, np.ndarray] = {}

    def _word_vector(self, word: str) -> np.ndarray:
        if word not in self._cache:
            digest = hashlib.blake2b(
                word.encode("utf-8"), digest_size=8, salt=self.seed.to_bytes(8, "little")
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            self._cache[word] = rng.standard_normal(self.dim)
        return self._cache[word]

    @staticmethod
    def tokenize(text: str) -> List[str]:
        return _WORD.findall(text.lower())

    def encode(self, text: str) -> np.ndarray:
        words = self.tokenize(text)
        if not words:
            return np.zeros(self.dim, dtype=np.float32)
        total = np.sum([self._word_vector(w) for w in words], axis=0)
        norm = np.linalg.norm(total)
        if norm > 0:
            total = total / norm
        return total.astype(np.float32)

    def __repr__(self) -> str:
        return f"HashedTextEncoder(dim={self.dim}, seed={self.seed})"
