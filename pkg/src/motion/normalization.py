"""
Per-channel feature normalization (z-scores) fitted over a motion corpus.
"""

from dataclasses import dataclass
from typing import Dict, Iterable

import numpy as np

from src.core.errors import DegenerateStats, ShapeMismatch
from src.core.motion import InteractionPair, MotionSequence

_MIN_STD = 1e-8


@dataclass
class FeatureStats:
    """
    Per-channel mean and standard deviation.

    Attributes:
        mean: (D,) channel means
        std: (D,) channel standard deviations (after the fitting floor)
    """
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeMismatch(f"mean {self.mean.shape} and std {self.std.shape} must be equal 1-D")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise DegenerateStats("Normalization stats contain NaN or Inf")
        if np.any(self.std <= _MIN_STD):
            raise DegenerateStats(f"Normalization std must exceed {_MIN_STD}, min is {self.std.min()}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "FeatureStats":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def to_dict(self) -> Dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> "FeatureStats":
        return cls(mean=np.asarray(data["mean"]), std=np.asarray(data["std"]))

    def __repr__(self) -> str:
        return f"FeatureStats(dim={self.dim})"


def fit_feature_stats(pairs: Iterable[InteractionPair], std_floor: float = 1e-3) -> FeatureStats:
    """
    Fit channel statistics over every frame of both persons.

    Channels whose std falls below std_floor (e.g. constant foot flags) get
    std_floor, so they normalize to zeros instead of blowing up.

    Raises:
        ValueError: If the corpus is empty
    """
    frames = [p.person_a.data for p in pairs] + [p.person_b.data for p in pairs]
    if not frames:
        raise ValueError("Cannot fit normalization stats on an empty corpus")
    stacked = np.concatenate(frames, axis=0).astype(np.float64)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), std_floor)
    return FeatureStats(mean=mean, std=std)


def _check(data: np.ndarray, stats: FeatureStats) -> None:
    if data.shape[-1] != stats.dim:
        raise ShapeMismatch(f"Feature dim {data.shape[-1]} does not match stats dim {stats.dim}")


def normalize_array(data: np.ndarray, stats: FeatureStats) -> np.ndarray:
    _check(data, stats)
    return (np.asarray(data, dtype=np.float64) - stats.mean) / stats.std


def denormalize_array(data: np.ndarray, stats: FeatureStats) -> np.ndarray:
    _check(data, stats)
    return np.asarray(data, dtype=np.float64) * stats.std + stats.mean


def znorm(seq: MotionSequence, stats: FeatureStats) -> MotionSequence:
    """
    Z-normalize a sequence; the result holds float64 data flagged as normalized.

    Raises:
        ShapeMismatch: If the feature dimension differs from the stats
    """
    return MotionSequence(
        layout=seq.layout, data=normalize_array(seq.data, stats), normalized=True
    )


def denorm(seq: MotionSequence, stats: FeatureStats) -> MotionSequence:
    """Inverse of znorm."""
    return MotionSequence(layout=seq.layout, data=denormalize_array(seq.data, stats))
