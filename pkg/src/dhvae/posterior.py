"""
Diagonal Gaussian posteriors and the latent triple {z_o, z_a, z_b}.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import torch

from src.core.errors import ShapeMismatch

LOGVAR_MIN = -30.0
LOGVAR_MAX = 20.0


@dataclass
class GaussianPosterior:
    """
    q(z|x) = N(mean, exp(log_variance)) over (..., l, latent_dim) tensors.

    Build from network outputs with from_raw, which clamps log_variance to
    [-30, 20]; direct construction keeps the values as given.
    """
    mean: torch.Tensor
    log_variance: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise ShapeMismatch(
                f"mean {tuple(self.mean.shape)} and log_variance "
                f"{tuple(self.log_variance.shape)} differ"
            )

    @classmethod
    def from_raw(cls, mean: torch.Tensor, log_variance: torch.Tensor) -> "GaussianPosterior":
        return cls(mean=mean, log_variance=log_variance.clamp(LOGVAR_MIN, LOGVAR_MAX))

    @classmethod
    def standard_normal(cls, shape, dtype=torch.float32) -> "GaussianPosterior":
        return cls(mean=torch.zeros(shape, dtype=dtype), log_variance=torch.zeros(shape, dtype=dtype))

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_variance)

    def detach(self) -> "GaussianPosterior":
        return GaussianPosterior(self.mean.detach(), self.log_variance.detach())

    def __repr__(self) -> str:
        return f"GaussianPosterior(shape={tuple(self.mean.shape)})"


def kl_diag_gaussian(posterior: GaussianPosterior) -> torch.Tensor:
    """
    KL(q || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - log sigma^2).

    Summed over the token and latent axes, averaged over any leading batch axes.

    Examples:
        >>> p = GaussianPosterior(torch.ones(1, 4), torch.zeros(1, 4))
        >>> float(kl_diag_gaussian(p))
        2.0
    """
    lv = posterior.log_variance
    per_element = 0.5 * (posterior.mean.pow(2) + lv.exp() - 1.0 - lv)
    per_sample = per_element.sum(dim=(-2, -1))
    return per_sample.mean()


def reparameterize(
    posterior: GaussianPosterior,
    noise_seed: Optional[int] = None,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    z = mean + exp(0.5 * log_variance) * eps, eps ~ N(0, I).

    Args:
        posterior: Posterior to sample
        noise_seed: Seed for a fresh generator (same seed -> same sample)
        generator: Explicit generator; ignored when noise_seed is given
    """
    if noise_seed is not None:
        generator = torch.Generator(device=posterior.mean.device).manual_seed(noise_seed)
    eps = torch.randn(
        posterior.mean.shape,
        generator=generator,
        dtype=posterior.mean.dtype,
        device=posterior.mean.device,
    )
    return posterior.mean + posterior.std * eps


@dataclass
class LatentTriple:
    """
    Global interaction latent z_o and individual latents z_a, z_b.

    Each is a (B, l, latent_dim) tensor; posteriors maps "o", "a", "b" to the
    GaussianPosterior each was drawn from (empty for diffusion samples).
    """
    z_o: torch.Tensor
    z_a: torch.Tensor
    z_b: torch.Tensor
    posteriors: Optional[Dict[str, GaussianPosterior]] = None

    def __post_init__(self):
        if not (self.z_o.shape == self.z_a.shape == self.z_b.shape):
            raise ShapeMismatch(
                f"Latent shapes differ: z_o {tuple(self.z_o.shape)}, z_a {tuple(self.z_a.shape)}, "
                f"z_b {tuple(self.z_b.shape)}"
            )
        if self.posteriors is None:
            self.posteriors = {}

    @property
    def latent_tokens(self) -> int:
        return self.z_o.shape[-2]

    def to_tokens(self) -> torch.Tensor:
        """(B, 3l, d) sequence ordered [z_o, z_a, z_b]."""
        return torch.cat([self.z_o, self.z_a, self.z_b], dim=-2)

    @classmethod
    def from_tokens(cls, tokens: torch.Tensor) -> "LatentTriple":
        if tokens.shape[-2] % 3 != 0:
            raise ShapeMismatch(f"Token count {tokens.shape[-2]} is not a multiple of 3")
        z_o, z_a, z_b = torch.chunk(tokens, 3, dim=-2)
        return cls(z_o=z_o, z_a=z_a, z_b=z_b)

    def __repr__(self) -> str:
        return f"LatentTriple(shape={tuple(self.z_o.shape)})"
