"""
Token scaling of the individual latents.

The diffusion tokens are [z_o, z_a / s_l, z_b / s_l]; s_l brings the
individual latents into the range of the interaction latent.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import torch

from src.core.errors import ShapeMismatch

logger = logging.getLogger(__name__)

MIN_SCALE = 1e-3


@dataclass
class TokenScaler:
    """
    Divides the z_a and z_b segments of a (B, 3l, d) token tensor by scale.

    Attributes:
        scale: s_l, strictly positive
        latent_tokens: l, the tokens per segment
    """
    scale: float = 1.0
    latent_tokens: int = 1

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"token scale must be positive, got {self.scale}")

    def _check(self, tokens: torch.Tensor) -> None:
        if tokens.ndim != 3 or tokens.shape[1] != 3 * self.latent_tokens:
            raise ShapeMismatch(
                f"Expected (B, {3 * self.latent_tokens}, d) tokens, got {tuple(tokens.shape)}"
            )

    def _individual(self, tokens: torch.Tensor, fn: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
        self._check(tokens)
        l = self.latent_tokens
        return torch.cat([tokens[:, :l], fn(tokens[:, l:])], dim=1)

    def scale_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """z_o unchanged, z_a and z_b divided by s_l."""
        return self._individual(tokens, lambda z: z / self.scale)

    def unscale(self, tokens: torch.Tensor) -> torch.Tensor:
        return self._individual(tokens, lambda z: z * self.scale)

    def __repr__(self) -> str:
        return f"TokenScaler(scale={self.scale:.4f}, latent_tokens={self.latent_tokens})"


def fit_token_scale(z_o: torch.Tensor, z_a: torch.Tensor, z_b: torch.Tensor) -> float:
    """
    s_l = mean per-channel std of z_a and z_b over the mean per-channel std of z_o.

    Args:
        z_o, z_a, z_b: (B, l, d) latents of a training set

    Returns:
        s_l, clamped to at least 1e-3
    """
    def channel_std(z: torch.Tensor) -> float:
        flat = z.detach().reshape(-1, z.shape[-1]).double()
        return float(flat.std(dim=0, unbiased=False).mean())

    individual = 0.5 * (channel_std(z_a) + channel_std(z_b))
    interaction = channel_std(z_o)
    if interaction <= 0.0:
        logger.warning("z_o has zero spread; token scale falls back to 1")
        return 1.0
    scale = max(individual / interaction, MIN_SCALE)
    logger.info("Token scale s_l = %.4f (individual std %.4f, interaction std %.4f)",
                scale, individual, interaction)
    return scale
