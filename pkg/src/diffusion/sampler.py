"""
Epsilon-prediction training loss, classifier-free guidance and DDIM sampling
over latent token sequences [z_o, z_a, z_b].

A denoiser is any callable

    denoiser(z_t, t, text, keep) -> eps

with z_t (B, S, d), t (B,) long in [1, T], text (B, text_dim) features and
keep (B,) bool; rows with keep False are unconditional and the denoiser
substitutes its null condition for them.
"""

import logging
import math
from typing import Optional, Protocol, Tuple

import torch
from tqdm import tqdm

from src.core.config import DiffusionConfig
from src.core.errors import InvalidTimestepOrder, ShapeMismatch, TimestepOutOfRange
from src.diffusion.schedule import NoiseSchedule, ddim_timesteps, q_sample, schedule_from_config

logger = logging.getLogger(__name__)


class Denoiser(Protocol):
    def __call__(
        self, z_t: torch.Tensor, t: torch.Tensor, text: torch.Tensor, keep: torch.Tensor
    ) -> torch.Tensor:
        ...


class TokenUnscaler(Protocol):
    def unscale(self, tokens: torch.Tensor) -> torch.Tensor:
        ...


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """
    Guided prediction (1 + scale) * eps_cond - scale * eps_uncond.

    Raises:
        ShapeMismatch: If the two predictions differ in shape
    """
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeMismatch(
            f"Conditional {tuple(eps_cond.shape)} and unconditional {tuple(eps_uncond.shape)} differ"
        )
    if scale == 0:
        return eps_cond
    return (1.0 + scale) * eps_cond - scale * eps_uncond


def ddim_step(
    z_t: torch.Tensor,
    eps: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    One DDIM update from t to t_prev.

    z0_hat = (z_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t)
    z_prev = sqrt(ab_prev) * z0_hat + sqrt(1 - ab_prev - sigma^2) * eps + sigma * noise

    with sigma = eta * sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev).
    eta = 0 is deterministic.

    Raises:
        InvalidTimestepOrder: Unless t > t_prev >= 0
        TimestepOutOfRange: If t > T
    """
    if not t > t_prev >= 0:
        raise InvalidTimestepOrder(f"DDIM needs t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if t > schedule.T:
        raise TimestepOutOfRange(f"t={t} exceeds T={schedule.T}")
    if eps.shape != z_t.shape:
        raise ShapeMismatch(f"eps {tuple(eps.shape)} does not match z_t {tuple(z_t.shape)}")

    ab_t = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t_prev)
    sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)

    z0_hat = (z_t - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)
    direction = math.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0))
    z_prev = math.sqrt(ab_prev) * z0_hat + direction * eps
    if sigma > 0:
        noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype).to(z_t.device)
        z_prev = z_prev + sigma * noise
    return z_prev


def training_loss(
    denoiser: Denoiser,
    z0: torch.Tensor,
    text: torch.Tensor,
    schedule: NoiseSchedule,
    cfg: DiffusionConfig,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Squared error between injected and predicted noise, summed per sample and
    averaged over the batch.

    t is uniform in [1, T]; each row's condition is dropped with probability
    cfg.uncond_ratio (its text features are zeroed and keep is False).
    """
    batch = z0.shape[0]
    if text.shape[0] != batch:
        raise ShapeMismatch(f"{text.shape[0]} conditions for a batch of {batch}")
    device = z0.device
    t = torch.randint(1, schedule.T + 1, (batch,), generator=generator).to(device)
    noise = torch.randn(z0.shape, generator=generator, dtype=z0.dtype).to(device)
    keep = (torch.rand(batch, generator=generator) >= cfg.uncond_ratio).to(device)
    text = torch.where(keep[:, None], text, torch.zeros_like(text))

    z_t = q_sample(z0, t, noise, schedule)
    predicted = denoiser(z_t, t, text, keep)
    return ((noise - predicted) ** 2).flatten(1).sum(dim=-1).mean()


def guided_eps(
    denoiser: Denoiser,
    z_t: torch.Tensor,
    t: int,
    text: torch.Tensor,
    scale: float,
) -> torch.Tensor:
    """Classifier-free guided noise at one step; scale 0 skips the unconditional pass."""
    batch = z_t.shape[0]
    steps = torch.full((batch,), t, dtype=torch.long, device=z_t.device)
    if scale == 0:
        keep = torch.ones(batch, dtype=torch.bool, device=z_t.device)
        return denoiser(z_t, steps, text, keep)

    keep = torch.cat(
        [
            torch.ones(batch, dtype=torch.bool, device=z_t.device),
            torch.zeros(batch, dtype=torch.bool, device=z_t.device),
        ]
    )
    eps = denoiser(
        torch.cat([z_t, z_t]),
        torch.cat([steps, steps]),
        torch.cat([text, torch.zeros_like(text)]),
        keep,
    )
    eps_cond, eps_uncond = eps.chunk(2)
    return cfg_combine(eps_cond, eps_uncond, scale)


@torch.no_grad()
def sample(
    denoiser: Denoiser,
    text: torch.Tensor,
    token_shape: Tuple[int, int],
    cfg: DiffusionConfig,
    seed: int = 0,
    schedule: Optional[NoiseSchedule] = None,
    scaler: Optional[TokenUnscaler] = None,
    cfg_scale: Optional[float] = None,
    steps: Optional[int] = None,
    progress: bool = False,
) -> torch.Tensor:
    """
    DDIM sampling from Gaussian tokens.

    Args:
        denoiser: Epsilon predictor
        text: (B, text_dim) condition features
        token_shape: (S, d) tokens per sample
        cfg: Diffusion settings (steps, guidance scale, eta)
        seed: Seed of the initial noise and any eta noise
        schedule: Defaults to the one described by cfg
        scaler: When given, its unscale() is applied to the final tokens
        cfg_scale: Overrides cfg.cfg_scale
        steps: Overrides cfg.inference_steps
        progress: Show a progress bar

    Returns:
        (B, S, d) tokens
    """
    schedule = schedule or schedule_from_config(cfg)
    scale = cfg.cfg_scale if cfg_scale is None else cfg_scale
    steps = cfg.inference_steps if steps is None else steps

    generator = torch.Generator().manual_seed(int(seed))
    z = torch.randn((text.shape[0], *token_shape), generator=generator, dtype=text.dtype).to(text.device)

    for t, t_prev in tqdm(ddim_timesteps(schedule.T, steps), desc="ddim", disable=not progress):
        eps = guided_eps(denoiser, z, t, text, scale)
        z = ddim_step(z, eps, t, t_prev, schedule, cfg.eta, generator)

    logger.debug("Sampled %d token sets with %d steps, guidance %.2f", text.shape[0], steps, scale)
    return scaler.unscale(z) if scaler is not None else z
