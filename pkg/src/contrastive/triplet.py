"""
Contact-aware triplets over the interaction latent z_o.

For an interaction (x_a, x_b), person b is shifted on the ground plane twice:

- positive: a small truncated-normal jitter, sigma_c for touching pairs and
  sigma_u otherwise, truncated at 3 sigma per coordinate;
- negative: a shift whose length lies in [neg_low_mult, neg_high_mult] * sigma_u
  in a uniformly random direction.

The three pairs are encoded to posterior means of z_o and combined with

    max(0, d(z_o, z_o+) - d(z_o, z_o-) + margin)

where d is the Euclidean distance over flattened latents.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from scipy.stats import truncnorm

from src.core.config import ContrastiveConfig
from src.core.errors import ShapeMismatch
from src.core.motion import InteractionPair, MotionLayout, MotionSequence, SkeletonSpec, ih_channels
from src.motion.normalization import FeatureStats, normalize_array
from src.physics.penetration import pair_bodies, sequence_overlaps
from src.physics.voxels import DEFAULT_RESOLUTION

logger = logging.getLogger(__name__)

POSITIVE_TRUNCATION = 3.0


class InteractionEncoder(Protocol):
    def encode_interaction(self, x_a: torch.Tensor, x_b: torch.Tensor) -> torch.Tensor:
        ...


def is_contact(pair: InteractionPair, skeleton: SkeletonSpec, resolution: float = DEFAULT_RESOLUTION) -> bool:
    """
    True iff the two voxelized bodies share at least one voxel in any frame.
    """
    body_a, body_b = pair_bodies(pair, skeleton)
    overlaps, _ = sequence_overlaps(body_a, body_b, resolution)
    return any(v > 0 for v in overlaps)


def translate_ground(seq: MotionSequence, delta: Sequence[float]) -> MotionSequence:
    """
    Shift a sequence by (dx, 0, dz) on the ground plane.

    Only global positions move: the IH262 position channels, or the root
    translation in row 0 of IX56x6. Velocities, rotations and foot flags are
    unchanged. The sequence must be unnormalized.
    """
    if seq.normalized:
        raise ValueError("translate_ground needs an unnormalized sequence")
    dx, dz = float(delta[0]), float(delta[1])
    data = np.array(seq.data, dtype=np.float64)
    J = seq.joint_count

    if seq.layout is MotionLayout.IH262:
        positions = data[:, ih_channels(J)["positions"]].reshape(-1, J, 3)
        positions[..., 0] += dx
        positions[..., 2] += dz
        data[:, ih_channels(J)["positions"]] = positions.reshape(-1, J * 3)
    else:
        data[:, 0] += dx
        data[:, 2] += dz
    return seq.with_data(data)


def sample_positive_delta(rng: np.random.Generator, contact: bool, cfg: ContrastiveConfig) -> np.ndarray:
    """
    Per-coordinate N(0, sigma^2) truncated to |value| <= 3 sigma.

    sigma is cfg.sigma_c for touching pairs and cfg.sigma_u otherwise.
    """
    sigma = cfg.sigma_c if contact else cfg.sigma_u
    return truncnorm.rvs(
        -POSITIVE_TRUNCATION, POSITIVE_TRUNCATION, loc=0.0, scale=sigma, size=2, random_state=rng
    )


def sample_negative_delta(rng: np.random.Generator, cfg: ContrastiveConfig) -> np.ndarray:
    """
    Planar shift with length in [neg_low_mult, neg_high_mult] * sigma_u.

    The length follows N(0, sigma_u^2) conditioned on the band; the direction
    is uniform on the circle.
    """
    magnitude = truncnorm.rvs(
        cfg.neg_low_mult, cfg.neg_high_mult, loc=0.0, scale=cfg.sigma_u, random_state=rng
    )
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([magnitude * np.cos(angle), magnitude * np.sin(angle)])


def triplet_loss(
    z_o: torch.Tensor, z_pos: torch.Tensor, z_neg: torch.Tensor, margin: float
) -> torch.Tensor:
    """
    Batch mean of max(0, d(z_o, z_pos) - d(z_o, z_neg) + margin).

    Examples:
        >>> z = torch.zeros(1, 2)
        >>> float(triplet_loss(z, z, z, 1.0))
        1.0
    """
    if z_o.shape != z_pos.shape or z_o.shape != z_neg.shape:
        raise ShapeMismatch(
            f"Triplet shapes differ: {tuple(z_o.shape)}, {tuple(z_pos.shape)}, {tuple(z_neg.shape)}"
        )
    d_pos, d_neg = triplet_distances(z_o, z_pos, z_neg)
    return torch.relu(d_pos - d_neg + margin).mean()


def triplet_distances(
    z_o: torch.Tensor, z_pos: torch.Tensor, z_neg: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    anchor = z_o.flatten(1)
    d_pos = torch.linalg.vector_norm(anchor - z_pos.flatten(1), dim=-1)
    d_neg = torch.linalg.vector_norm(anchor - z_neg.flatten(1), dim=-1)
    return d_pos, d_neg


class TripletLoss(nn.Module):
    """
    Module form of triplet_loss.
    """

    def __init__(self, margin: float = 1.0):
        super().__init__()
        if margin <= 0:
            raise ValueError(f"margin must be positive, got {margin}")
        self.margin = margin

    def forward(self, anchor: torch.Tensor, positive: torch.Tensor, negative: torch.Tensor) -> torch.Tensor:
        return triplet_loss(anchor, positive, negative, self.margin)

    @classmethod
    def from_config(cls, cfg: ContrastiveConfig) -> "TripletLoss":
        return cls(margin=cfg.margin)


@dataclass
class TripletBatch:
    """
    Anchor, positive and negative inputs of one contrastive step.

    Attributes:
        x_a: (B, N, D) person a, normalized if stats were given
        x_b: (B, N, D) person b
        x_b_pos: (B, N, D) person b after the positive shift
        x_b_neg: (B, N, D) person b after the negative shift
        contact: Contact decision per pair
        delta_pos: (B, 2) positive shifts in metres
        delta_neg: (B, 2) negative shifts in metres
    """
    x_a: np.ndarray
    x_b: np.ndarray
    x_b_pos: np.ndarray
    x_b_neg: np.ndarray
    contact: List[bool]
    delta_pos: np.ndarray
    delta_neg: np.ndarray


def build_triplets(
    pairs: Sequence[InteractionPair],
    rng: np.random.Generator,
    cfg: ContrastiveConfig,
    stats: Optional[FeatureStats] = None,
    contact: Optional[Sequence[bool]] = None,
    skeleton: Optional[SkeletonSpec] = None,
) -> TripletBatch:
    """
    Shift person b of every pair and stack the results.

    Contact decisions come from `contact` when given, otherwise from is_contact
    with `skeleton`.
    """
    if not pairs:
        raise ValueError("build_triplets needs at least one pair")
    frames = {p.frames for p in pairs}
    if len(frames) != 1:
        raise ShapeMismatch(f"All pairs in a triplet batch must share a length, got {sorted(frames)}")
    if contact is None:
        if skeleton is None:
            raise ValueError("Either contact flags or a skeleton is required")
        contact = [is_contact(p, skeleton) for p in pairs]
    if len(contact) != len(pairs):
        raise ShapeMismatch(f"{len(contact)} contact flags for {len(pairs)} pairs")

    def prepare(seq: MotionSequence) -> np.ndarray:
        data = np.asarray(seq.data, dtype=np.float64)
        return normalize_array(data, stats) if stats is not None else data

    xs_a, xs_b, xs_pos, xs_neg, d_pos, d_neg = [], [], [], [], [], []
    for pair, touching in zip(pairs, contact):
        delta_pos = sample_positive_delta(rng, bool(touching), cfg)
        delta_neg = sample_negative_delta(rng, cfg)
        xs_a.append(prepare(pair.person_a))
        xs_b.append(prepare(pair.person_b))
        xs_pos.append(prepare(translate_ground(pair.person_b, delta_pos)))
        xs_neg.append(prepare(translate_ground(pair.person_b, delta_neg)))
        d_pos.append(delta_pos)
        d_neg.append(delta_neg)

    return TripletBatch(
        x_a=np.stack(xs_a),
        x_b=np.stack(xs_b),
        x_b_pos=np.stack(xs_pos),
        x_b_neg=np.stack(xs_neg),
        contact=[bool(c) for c in contact],
        delta_pos=np.stack(d_pos),
        delta_neg=np.stack(d_neg),
    )


def _encoder_dtype(encoder) -> torch.dtype:
    if isinstance(encoder, nn.Module):
        for parameter in encoder.parameters():
            return parameter.dtype
    return torch.float32


def _encoder_device(encoder) -> torch.device:
    if isinstance(encoder, nn.Module):
        for parameter in encoder.parameters():
            return parameter.device
    return torch.device("cpu")


def contrastive_step(
    pairs: Sequence[InteractionPair],
    encoder: InteractionEncoder,
    rng: np.random.Generator,
    cfg: ContrastiveConfig,
    stats: Optional[FeatureStats] = None,
    contact: Optional[Sequence[bool]] = None,
    skeleton: Optional[SkeletonSpec] = None,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """
    Triplet loss of a batch of pairs through the encoder's z_o posterior mean.

    Args:
        pairs: Unnormalized interaction pairs of equal length
        encoder: Anything with encode_interaction(x_a, x_b) -> z_o
        rng: Source of the positive and negative shifts
        cfg: Contrastive settings
        stats: Feature stats applied after shifting, if the encoder expects normalized input
        contact: Precomputed contact flags (otherwise derived with skeleton)
        skeleton: Needed when contact is None

    Returns:
        (loss, diagnostics) with mean d_pos, mean d_neg and the contact fraction
    """
    batch = build_triplets(pairs, rng, cfg, stats, contact, skeleton)
    dtype = _encoder_dtype(encoder)
    device = _encoder_device(encoder)

    def tensor(array: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(array, dtype=dtype, device=device)

    x_a = tensor(batch.x_a)
    z_o = encoder.encode_interaction(x_a, tensor(batch.x_b))
    z_pos = encoder.encode_interaction(x_a, tensor(batch.x_b_pos))
    z_neg = encoder.encode_interaction(x_a, tensor(batch.x_b_neg))

    loss = triplet_loss(z_o, z_pos, z_neg, cfg.margin)
    with torch.no_grad():
        d_pos, d_neg = triplet_distances(z_o, z_pos, z_neg)
    diagnostics = {
        "triplet": float(loss.detach()),
        "d_pos": float(d_pos.mean()),
        "d_neg": float(d_neg.mean()),
        "contact_fraction": float(np.mean(batch.contact)),
    }
    logger.debug("contrastive step %s", diagnostics)
    return loss, diagnostics
