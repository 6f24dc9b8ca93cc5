"""
DHVAE objectives.

Hierarchical ELBO (to be minimized):

    recon(x_a, x_a_hat) + recon(x_b, x_b_hat) + kl_weight * (KL_a + KL_b + KL_o)

with a unit-variance Gaussian likelihood, i.e. MSE on z-normalized features.
The total DHVAE loss adds an L1 joint-position term on denormalized motion and
the weighted contrastive triplet term. flat_elbo_loss is the single-latent
baseline over the concatenated pair.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import torch
import torch.nn.functional as F

from src.core.config import DHVAEConfig
from src.core.motion import MotionLayout, SkeletonSpec
from src.dhvae.model import DHVAEOutput
from src.dhvae.posterior import GaussianPosterior, kl_diag_gaussian
from src.motion.kinematics import joint_positions_torch
from src.motion.normalization import FeatureStats


@dataclass
class ELBOTerms:
    """
    The five ELBO terms and the KL weight they were combined with.
    """
    recon_a: torch.Tensor
    recon_b: torch.Tensor
    kl_a: torch.Tensor
    kl_b: torch.Tensor
    kl_o: torch.Tensor
    kl_weight: float

    @property
    def total(self) -> torch.Tensor:
        return self.recon_a + self.recon_b + self.kl_weight * (self.kl_a + self.kl_b + self.kl_o)

    def as_dict(self) -> Dict[str, float]:
        return {
            "recon_a": float(self.recon_a),
            "recon_b": float(self.recon_b),
            "kl_a": float(self.kl_a),
            "kl_b": float(self.kl_b),
            "kl_o": float(self.kl_o),
        }


def recon_loss(recon: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(recon, target)


def elbo_terms(
    x_a: torch.Tensor,
    x_b: torch.Tensor,
    recon_a: torch.Tensor,
    recon_b: torch.Tensor,
    posteriors: Dict[str, GaussianPosterior],
    kl_weight: float,
) -> ELBOTerms:
    return ELBOTerms(
        recon_a=recon_loss(recon_a, x_a),
        recon_b=recon_loss(recon_b, x_b),
        kl_a=kl_diag_gaussian(posteriors["a"]),
        kl_b=kl_diag_gaussian(posteriors["b"]),
        kl_o=kl_diag_gaussian(posteriors["o"]),
        kl_weight=kl_weight,
    )


def elbo_loss(
    x_a: torch.Tensor, x_b: torch.Tensor, output: DHVAEOutput, kl_weight: float
) -> Tuple[torch.Tensor, ELBOTerms]:
    """
    Hierarchical ELBO of a forward pass.

    Returns:
        (total, terms) where total == terms.total
    """
    terms = elbo_terms(
        x_a, x_b, output.recon_a, output.recon_b, output.triple.posteriors, kl_weight
    )
    return terms.total, terms


def flat_elbo_loss(
    x: torch.Tensor, recon: torch.Tensor, posterior: GaussianPosterior, kl_weight: float
) -> torch.Tensor:
    """
    Single-latent ELBO: recon(x, x_hat) + kl_weight * KL(q(z|x) || N(0, I)).
    """
    return recon_loss(recon, x) + kl_weight * kl_diag_gaussian(posterior)


def denormalize_torch(x: torch.Tensor, stats: FeatureStats) -> torch.Tensor:
    mean = torch.as_tensor(stats.mean, dtype=x.dtype, device=x.device)
    std = torch.as_tensor(stats.std, dtype=x.dtype, device=x.device)
    return x * std + mean


def joint_loss(
    x_a: torch.Tensor,
    x_b: torch.Tensor,
    recon_a: torch.Tensor,
    recon_b: torch.Tensor,
    stats: FeatureStats,
    layout: MotionLayout,
    skeleton: SkeletonSpec,
) -> torch.Tensor:
    """
    L1 between reconstructed and input joint positions, in metres, summed over persons.
    """
    total = x_a.new_zeros(())
    for target, recon in ((x_a, recon_a), (x_b, recon_b)):
        joints_ref = joint_positions_torch(denormalize_torch(target, stats), layout, skeleton)
        joints_rec = joint_positions_torch(denormalize_torch(recon, stats), layout, skeleton)
        total = total + F.l1_loss(joints_rec, joints_ref)
    return total


def dhvae_total_loss(
    elbo: torch.Tensor,
    joint_term: torch.Tensor,
    triplet_term: torch.Tensor,
    cfg: DHVAEConfig,
) -> torch.Tensor:
    """
    elbo + joint_weight * joint_term + triplet_weight * triplet_term.
    """
    return elbo + cfg.joint_weight * joint_term + cfg.triplet_weight * triplet_term
