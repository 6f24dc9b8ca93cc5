"""
Feature extractors for the generation metrics.

Both extractors map interaction pairs and texts into one shared feature
space of fixed dimension. They stand in for pretrained motion/text
evaluators, so metric values are comparable between runs that use the
same extractor settings but not with published numbers.
"""

import logging
from abc import ABC, abstractmethod
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import linalg
from scipy.interpolate import interp1d

from src.core.errors import ShapeMismatch
from src.core.motion import InteractionPair
from src.core.text import HashedTextEncoder, TextEncoder
from src.motion.normalization import FeatureStats, normalize_array

logger = logging.getLogger(__name__)


class FeatureExtractor(ABC):
    """
    Deterministic map from pairs and texts to (n, dim) float64 features.
    """

    name: str = "extractor"
    dim: int
    text_encoder: TextEncoder

    @abstractmethod
    def motion_features(self, pairs: Sequence[InteractionPair]) -> np.ndarray:
        ...

    def text_features(self, texts: Sequence[str]) -> np.ndarray:
        return self.text_encoder.encode_batch(list(texts)).astype(np.float64)

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim}


def resample_frames(data: np.ndarray, frames: int) -> np.ndarray:
    """Linear resampling of (N, D) data to (frames, D) over the same time span."""
    if data.shape[0] == frames:
        return np.asarray(data, dtype=np.float64)
    if data.shape[0] == 1:
        return np.repeat(np.asarray(data, dtype=np.float64), frames, axis=0)
    source = np.linspace(0.0, 1.0, data.shape[0])
    target = np.linspace(0.0, 1.0, frames)
    return interp1d(source, data, axis=0)(target)


class RandomProjectionExtractor(FeatureExtractor):
    """
    Fixed-seed random projection of resampled, z-normalized motion.

    Motion features are W^T vec([x_a, x_b]) with W drawn from N(0, 1/k). An
    optional ridge map fitted on reference (motion, text) pairs carries them
    into the hashed text space; without it, text and motion spaces are unrelated.

    Args:
        feature_dim: Output dimension (shared with the text encoder)
        frames: Clips are resampled to this many frames
        stats: Channel stats applied before projection (identity if None)
        seed: Seed of the projection and the text hash salt
    """

    name = "random_projection"

    def __init__(
        self,
        feature_dim: int = 64,
        frames: int = 32,
        stats: Optional[FeatureStats] = None,
        seed: int = 0,
        text_encoder: Optional[TextEncoder] = None,
    ):
        self.dim = feature_dim
        self.frames = frames
        self.stats = stats
        self.seed = seed
        self.text_encoder = text_encoder or HashedTextEncoder(dim=feature_dim, seed=seed)
        if self.text_encoder.dim != feature_dim:
            raise ShapeMismatch(
                f"Text encoder dim {self.text_encoder.dim} differs from feature dim {feature_dim}"
            )
        self._projection: Optional[np.ndarray] = None
        self._alignment: Optional[np.ndarray] = None
        self._offset: Optional[np.ndarray] = None

    def _project(self, flat: np.ndarray) -> np.ndarray:
        if self._projection is None or self._projection.shape[0] != flat.shape[1]:
            rng = np.random.default_rng(self.seed)
            self._projection = rng.standard_normal((flat.shape[1], self.dim)) / np.sqrt(flat.shape[1])
        return flat @ self._projection

    def raw_features(self, pairs: Sequence[InteractionPair]) -> np.ndarray:
        rows = []
        for pair in pairs:
            people = []
            for seq in (pair.person_a, pair.person_b):
                data = np.asarray(seq.data, dtype=np.float64)
                if self.stats is not None and not seq.normalized:
                    data = normalize_array(data, self.stats)
                people.append(resample_frames(data, self.frames))
            rows.append(np.concatenate(people, axis=-1).reshape(-1))
        if not rows:
            return np.zeros((0, self.dim))
        return self._project(np.stack(rows))

    def motion_features(self, pairs: Sequence[InteractionPair]) -> np.ndarray:
        features = self.raw_features(pairs)
        if self._alignment is not None:
            features = features @ self._alignment + self._offset
        return features

    def fit_alignment(self, pairs: Sequence[InteractionPair], ridge: float = 1e-3) -> "RandomProjectionExtractor":
        """
        Least-squares map from projected motion to the text features of the same clips.
        """
        motion = self.raw_features(pairs)
        text = self.text_features([p.text for p in pairs])
        motion_mean = motion.mean(axis=0)
        text_mean = text.mean(axis=0)
        centred = motion - motion_mean
        gram = centred.T @ centred + ridge * len(pairs) * np.eye(self.dim)
        self._alignment = linalg.solve(gram, centred.T @ (text - text_mean), assume_a="pos")
        self._offset = text_mean - motion_mean @ self._alignment
        logger.info("Fitted motion-to-text alignment on %d clips", len(pairs))
        return self

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "frames": self.frames,
            "seed": self.seed,
            "aligned": self._alignment is not None,
        }


class LatentFeatureExtractor(FeatureExtractor):
    """
    Motion features are the flattened DHVAE posterior means [z_o, z_a, z_b].

    Args:
        model: Trained DHVAE (anything with latent_means(x_a, x_b))
        stats: Stats the model was trained with
        seed: Text hash salt
    """

    name = "latent"

    def __init__(self, model, stats: FeatureStats, seed: int = 0):
        self.model = model
        self.stats = stats
        cfg = model.cfg
        self.dim = 3 * cfg.latent_tokens * cfg.latent_dim
        self.text_encoder = HashedTextEncoder(dim=self.dim, seed=seed)

    @torch.no_grad()
    def motion_features(self, pairs: Sequence[InteractionPair]) -> np.ndarray:
        rows = []
        for pair in pairs:
            tensors = []
            for seq in (pair.person_a, pair.person_b):
                data = np.asarray(seq.data, dtype=np.float64)
                if not seq.normalized:
                    data = normalize_array(data, self.stats)
                tensors.append(torch.as_tensor(data, dtype=torch.float32)[None])
            triple = self.model.latent_means(*tensors)
            rows.append(triple.to_tokens().reshape(-1).double().numpy())
        return np.stack(rows) if rows else np.zeros((0, self.dim))
