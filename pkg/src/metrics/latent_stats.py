"""
Channel statistics of encoded latents.

A diagnostic for how hard the latents are to denoise: per-channel variance
of each segment, Frobenius norms of the cross-segment covariances, and the KL
of each segment's fitted diagonal Gaussian to N(0, I).
"""

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Dict, Mapping

import numpy as np

from src.core.errors import InsufficientSamples, ShapeMismatch


def _as_rows(latents: np.ndarray) -> np.ndarray:
    """(n, l, d) or (n, d) latents -> (n * l, d) channel rows."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim == 3:
        latents = latents.reshape(-1, latents.shape[-1])
    if latents.ndim != 2:
        raise ShapeMismatch(f"Expected (n, l, d) or (n, d) latents, got {latents.shape}")
    return latents


def cross_covariance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample covariance between the channels of x and y, (d_x, d_y)."""
    if x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"Row counts differ: {x.shape[0]} vs {y.shape[0]}")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    return xc.T @ yc / (x.shape[0] - 1)


def diagonal_kl(rows: np.ndarray) -> float:
    """Mean per-channel KL(N(mean, var) || N(0, 1)) of a fitted diagonal Gaussian."""
    mean = rows.mean(axis=0)
    var = rows.var(axis=0, ddof=1)
    var = np.maximum(var, 1e-12)
    return float(np.mean(0.5 * (var + mean ** 2 - 1.0 - np.log(var))))


@dataclass
class LatentStatistics:
    """
    Attributes:
        channel_variance: Segment name -> (d,) per-channel variance
        cross_covariance_norm: "x_y" -> Frobenius norm of cov(x, y), including "x_x"
        kl_to_prior: Segment name -> mean per-channel KL to N(0, 1)
        samples: Number of latent rows per segment
    """
    channel_variance: Dict[str, np.ndarray]
    cross_covariance_norm: Dict[str, float]
    kl_to_prior: Dict[str, float]
    samples: int

    def variance_spread(self) -> Dict[str, float]:
        """Max over min channel variance per segment."""
        return {
            name: float(v.max() / max(v.min(), 1e-12)) for name, v in self.channel_variance.items()
        }

    def to_dict(self) -> Dict:
        return {
            "samples": self.samples,
            "mean_channel_variance": {k: float(v.mean()) for k, v in self.channel_variance.items()},
            "channel_variance": {k: v.tolist() for k, v in self.channel_variance.items()},
            "variance_spread": self.variance_spread(),
            "cross_covariance_norm": self.cross_covariance_norm,
            "kl_to_prior": self.kl_to_prior,
        }


def latent_statistics(segments: Mapping[str, np.ndarray]) -> LatentStatistics:
    """
    Statistics of latents grouped by segment, e.g. {"o": z_o, "a": z_a, "b": z_b}.

    Raises:
        InsufficientSamples: If a segment has fewer than 2 rows
        ShapeMismatch: If segments have different row counts
    """
    rows = {name: _as_rows(z) for name, z in segments.items()}
    counts = {r.shape[0] for r in rows.values()}
    if len(counts) > 1:
        raise ShapeMismatch(f"Segments have different row counts: {sorted(counts)}")
    if not rows or min(counts) < 2:
        raise InsufficientSamples("latent_statistics needs at least 2 latent samples per segment")

    norms = {}
    for first, second in combinations_with_replacement(sorted(rows), 2):
        norms[f"{first}_{second}"] = float(
            np.linalg.norm(cross_covariance(rows[first], rows[second]), ord="fro")
        )
    return LatentStatistics(
        channel_variance={name: r.var(axis=0, ddof=1) for name, r in rows.items()},
        cross_covariance_norm=norms,
        kl_to_prior={name: diagonal_kl(r) for name, r in rows.items()},
        samples=counts.pop(),
    )
