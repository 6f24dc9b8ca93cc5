"""
Noise schedules and the closed-form forward process.

Timesteps are 1-based: t = 1 is the first noising step and t = T the last.
alpha_bar(0) is taken to be 1, which lets the final DDIM step land on the
clean estimate.
"""

from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np
import torch

from src.core.config import DiffusionConfig
from src.core.errors import InvalidScheduleParams, ShapeMismatch, TimestepOutOfRange

SCHEDULE_KINDS = ("linear", "scaled_linear")

TimestepLike = Union[int, torch.Tensor]


@dataclass
class NoiseSchedule:
    """
    Discrete variance schedule over T steps.

    Attributes:
        kind: 'linear' (beta affine in t) or 'scaled_linear' (sqrt(beta) affine in t)
        betas: (T,) float64, betas[t - 1] is beta_t
        alphas: (T,) float64, 1 - betas
        alpha_bar: (T,) float64 running products of alphas
    """
    kind: str
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar for 0 <= t <= T, with alpha_bar(0) = 1."""
        if not 0 <= t <= self.T:
            raise TimestepOutOfRange(f"t={t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def alpha_bar_table(self) -> np.ndarray:
        """(T + 1,) table indexed by t, entry 0 being 1."""
        return np.concatenate([[1.0], self.alpha_bar])

    def __repr__(self) -> str:
        return (
            f"NoiseSchedule(kind={self.kind}, T={self.T}, "
            f"beta=[{self.betas[0]:.5f}, {self.betas[-1]:.5f}], alpha_bar_T={self.alpha_bar[-1]:.3e})"
        )


def build_schedule(
    kind: str = "scaled_linear",
    beta_start: float = 0.00085,
    beta_end: float = 0.012,
    T: int = 1000,
) -> NoiseSchedule:
    """
    Build a schedule whose first and last betas are beta_start and beta_end.

    Raises:
        InvalidScheduleParams: Unknown kind, T < 1, or betas outside 0 < start <= end < 1

    Examples:
        >>> round(build_schedule("linear").alpha_bar_at(1), 8)
        0.99915
    """
    if kind not in SCHEDULE_KINDS:
        raise InvalidScheduleParams(f"Unknown schedule kind '{kind}', expected one of {SCHEDULE_KINDS}")
    if T < 1:
        raise InvalidScheduleParams(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidScheduleParams(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )

    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    else:
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T, dtype=np.float64) ** 2
    alphas = 1.0 - betas
    return NoiseSchedule(kind=kind, betas=betas, alphas=alphas, alpha_bar=np.cumprod(alphas))


def schedule_from_config(cfg: DiffusionConfig) -> NoiseSchedule:
    return build_schedule(cfg.schedule_kind, cfg.beta_start, cfg.beta_end, cfg.timesteps)


def _timestep_tensor(t: TimestepLike, batch: int, T: int) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    if t.ndim == 0:
        t = t.expand(batch)
    if t.shape != (batch,):
        raise ShapeMismatch(f"Timesteps {tuple(t.shape)} do not match batch {batch}")
    if bool((t < 1).any()) or bool((t > T).any()):
        raise TimestepOutOfRange(f"Timesteps must lie in [1, {T}], got [{int(t.min())}, {int(t.max())}]")
    return t


def _broadcast(values: np.ndarray, like: torch.Tensor) -> torch.Tensor:
    out = torch.as_tensor(values, dtype=like.dtype, device=like.device)
    return out.reshape(-1, *([1] * (like.ndim - 1)))


def q_sample(
    z0: torch.Tensor, t: TimestepLike, noise: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """
    z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * noise.

    Args:
        z0: (B, ...) clean tokens
        t: Scalar or (B,) timesteps in [1, T]
        noise: Same shape as z0

    Raises:
        ShapeMismatch: If noise and z0 differ in shape
        TimestepOutOfRange: If any t lies outside [1, T]
    """
    if noise.shape != z0.shape:
        raise ShapeMismatch(f"noise {tuple(noise.shape)} does not match z0 {tuple(z0.shape)}")
    steps = _timestep_tensor(t, z0.shape[0], schedule.T).cpu().numpy()
    alpha_bar = schedule.alpha_bar[steps - 1]
    return mix(z0, noise, alpha_bar)


def mix(z0: torch.Tensor, noise: torch.Tensor, alpha_bar: Union[float, np.ndarray]) -> torch.Tensor:
    """Forward-process mixture for explicit alpha_bar values (scalar or per batch row)."""
    alpha_bar = np.array(np.broadcast_to(np.asarray(alpha_bar, dtype=np.float64), (z0.shape[0],)))
    return _broadcast(np.sqrt(alpha_bar), z0) * z0 + _broadcast(np.sqrt(1.0 - alpha_bar), z0) * noise


def ddim_timesteps(T: int, steps: int) -> List[Tuple[int, int]]:
    """
    (t, t_prev) pairs of a uniformly strided DDIM sub-schedule, ending at t_prev = 0.

    Examples:
        >>> ddim_timesteps(1000, 4)
        [(1000, 750), (750, 500), (500, 250), (250, 0)]
    """
    if not 1 <= steps <= T:
        raise InvalidScheduleParams(f"steps must lie in [1, {T}], got {steps}")
    grid = np.round(np.linspace(T, 0, steps + 1)).astype(np.int64)
    return [(int(grid[i]), int(grid[i + 1])) for i in range(steps)]
