"""
AdaLN-zero transformer denoiser over the latent tokens [z_o, z_a, z_b].

    tokens -> input projection -> segment positional encoding
           -> L AdaLN-zero blocks with U-Net style skips between opposite layers
           -> adaptive final norm -> output projection -> predicted noise

Every block is conditioned on one vector c = timestep embedding + text
embedding (or the learned null embedding for unconditional rows). With L
layers, the outputs of layers 0 .. L//2 - 1 are concatenated onto the inputs
of layers L-1 .. L-L//2 and projected back to the hidden size.
"""

import logging
import math
from enum import IntEnum
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from src.core.config import DenoiserConfig
from src.core.errors import ShapeMismatch, TimestepOutOfRange

logger = logging.getLogger(__name__)


class SegmentId(IntEnum):
    """Role of a latent token."""
    GLOBAL = 0
    PERSON_A = 1
    PERSON_B = 2


def segment_layout(latent_tokens: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Segment ids and within-segment positions of the 3l tokens.

    Examples:
        >>> ids, pos = segment_layout(2)
        >>> ids.tolist(), pos.tolist()
        ([0, 0, 1, 1, 2, 2], [0, 1, 0, 1, 0, 1])
    """
    ids = torch.arange(3).repeat_interleave(latent_tokens)
    positions = torch.arange(latent_tokens).repeat(3)
    return ids, positions


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale) + shift


class TimestepEmbedder(nn.Module):
    """
    Learned table row per timestep followed by Linear -> SiLU -> Linear.
    """

    def __init__(self, hidden: int, timesteps: int):
        super().__init__()
        self.timesteps = timesteps
        self.table = nn.Embedding(timesteps + 1, hidden)
        self.mlp = nn.Sequential(nn.Linear(hidden, hidden), nn.SiLU(), nn.Linear(hidden, hidden))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        if bool((t < 1).any()) or bool((t > self.timesteps).any()):
            raise TimestepOutOfRange(
                f"Timesteps must lie in [1, {self.timesteps}], got [{int(t.min())}, {int(t.max())}]"
            )
        return self.mlp(self.table(t))


class SegmentPositionalEncoding(nn.Module):
    """
    Adds a learned row per segment and, for l > 1, a learned row per
    within-segment position.
    """

    def __init__(self, hidden: int, latent_tokens: int, segments: int = 3):
        super().__init__()
        self.segments = segments
        self.latent_tokens = latent_tokens
        self.segment = nn.Embedding(segments, hidden)
        self.position = nn.Embedding(latent_tokens, hidden) if latent_tokens > 1 else None
        nn.init.normal_(self.segment.weight, std=0.02)
        if self.position is not None:
            nn.init.normal_(self.position.weight, std=0.02)

    def offsets(self, ids: torch.Tensor, positions: Optional[torch.Tensor] = None) -> torch.Tensor:
        if bool((ids < 0).any()) or bool((ids >= self.segments).any()):
            raise ShapeMismatch(f"Segment ids must lie in [0, {self.segments}), got {ids.tolist()}")
        out = self.segment(ids)
        if self.position is not None and positions is not None:
            out = out + self.position(positions)
        return out

    def forward(
        self, tokens: torch.Tensor, ids: torch.Tensor, positions: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        if ids.shape[-1] != tokens.shape[-2]:
            raise ShapeMismatch(f"{ids.shape[-1]} segment ids for {tokens.shape[-2]} tokens")
        return tokens + self.offsets(ids, positions)


class SinusoidalPositionalEncoding(nn.Module):
    """Fixed sinusoids over the flat token index, ignoring segment roles."""

    def __init__(self, hidden: int, length: int):
        super().__init__()
        position = torch.arange(length, dtype=torch.float32)[:, None]
        div = torch.exp(torch.arange(0, hidden, 2, dtype=torch.float32) * (-math.log(10000.0) / hidden))
        table = torch.zeros(length, hidden)
        table[:, 0::2] = torch.sin(position * div)
        table[:, 1::2] = torch.cos(position * div[: hidden // 2])
        self.register_buffer("table", table)

    def forward(
        self, tokens: torch.Tensor, ids: torch.Tensor, positions: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        return tokens + self.table[: tokens.shape[-2]].to(tokens.dtype)


class AdaLNBlock(nn.Module):
    """
    Transformer block with adaptive LayerNorm and zero-initialized gates.

        x = x + gate_1 * Attn(LN(x) * (1 + scale_1) + shift_1)
        x = x + gate_2 * MLP(LN(x) * (1 + scale_2) + shift_2)

    (shift, scale, gate) for both sub-layers come from SiLU -> Linear on the
    condition vector; that Linear starts at zero, so a fresh block is the identity.
    """

    def __init__(self, hidden: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.hidden = hidden
        self.norm1 = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.attn = nn.MultiheadAttention(hidden, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, 4 * hidden),
            nn.GELU(approximate="tanh"),
            nn.Dropout(dropout),
            nn.Linear(4 * hidden, hidden),
        )
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(hidden, 6 * hidden))
        nn.init.zeros_(self.modulation[1].weight)
        nn.init.zeros_(self.modulation[1].bias)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        if c.shape[-1] != self.hidden:
            raise ShapeMismatch(f"Condition width {c.shape[-1]} does not match hidden {self.hidden}")
        shift1, scale1, gate1, shift2, scale2, gate2 = self.modulation(c)[:, None, :].chunk(6, dim=-1)
        h = modulate(self.norm1(x), shift1, scale1)
        x = x + gate1 * self.attn(h, h, h, need_weights=False)[0]
        x = x + gate2 * self.mlp(modulate(self.norm2(x), shift2, scale2))
        return x


class FinalLayer(nn.Module):
    """Adaptive norm and zero-initialized projection to the latent width."""

    def __init__(self, hidden: int, latent_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(hidden, 2 * hidden))
        self.linear = nn.Linear(hidden, latent_dim)
        for layer in (self.modulation[1], self.linear):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        shift, scale = self.modulation(c)[:, None, :].chunk(2, dim=-1)
        return self.linear(modulate(self.norm(x), shift, scale))


def skip_pairs(layers: int) -> List[Tuple[int, int]]:
    """
    (source, target) layer pairs; source's output feeds target's input.

    Examples:
        >>> skip_pairs(13)[0], skip_pairs(13)[-1], len(skip_pairs(13))
        ((0, 12), (5, 7), 6)
    """
    return [(k, layers - 1 - k) for k in range(layers // 2)]


class SkipFusion(nn.Module):
    """Linear map of [x, skip] back to the hidden width, starting at (x + skip) / 2."""

    def __init__(self, hidden: int):
        super().__init__()
        self.proj = nn.Linear(2 * hidden, hidden)
        eye = torch.eye(hidden)
        with torch.no_grad():
            self.proj.weight.copy_(torch.cat([0.5 * eye, 0.5 * eye], dim=1))
            self.proj.bias.zero_()

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        return self.proj(torch.cat([x, skip], dim=-1))


class LatentDenoiser(nn.Module):
    """
    Epsilon predictor eps(z_t, t, c) over (B, 3l, latent_dim) tokens.

    Args:
        cfg: Denoiser settings
        latent_dim: Width d of each latent token
        latent_tokens: l, tokens per segment
        timesteps: T of the noise schedule
    """

    def __init__(self, cfg: DenoiserConfig, latent_dim: int, latent_tokens: int, timesteps: int = 1000):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.latent_dim = latent_dim
        self.latent_tokens = latent_tokens
        self.timesteps = timesteps
        h = cfg.hidden_dim

        self.input_proj = nn.Linear(latent_dim, h)
        if cfg.positional == "segment":
            self.positional = SegmentPositionalEncoding(h, latent_tokens, cfg.segment_count)
        else:
            self.positional = SinusoidalPositionalEncoding(h, 3 * latent_tokens)
        ids, positions = segment_layout(latent_tokens)
        self.register_buffer("segment_ids", ids, persistent=False)
        self.register_buffer("segment_positions", positions, persistent=False)

        self.time_embed = TimestepEmbedder(h, timesteps)
        self.text_proj = nn.Linear(cfg.text_dim, h)
        self.null_condition = nn.Parameter(torch.randn(h) * 0.02)

        self.blocks = nn.ModuleList(AdaLNBlock(h, cfg.heads, cfg.dropout) for _ in range(cfg.layers))
        self.skip_pairs = skip_pairs(cfg.layers) if cfg.skip_connections else []
        self.skip_fusion = nn.ModuleDict({str(target): SkipFusion(h) for _, target in self.skip_pairs})
        self.final = FinalLayer(h, latent_dim)

    @property
    def token_shape(self) -> Tuple[int, int]:
        return 3 * self.latent_tokens, self.latent_dim

    def condition(
        self, t: torch.Tensor, text: torch.Tensor, keep: Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        """c = timestep embedding + (text embedding where keep, else the null embedding)."""
        text_embedding = self.text_proj(text)
        if keep is not None:
            null = self.null_condition.to(text_embedding.dtype).expand_as(text_embedding)
            text_embedding = torch.where(keep[:, None], text_embedding, null)
        return self.time_embed(t) + text_embedding

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor,
        text: torch.Tensor,
        keep: Optional[torch.Tensor] = None,
        segment_ids: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """
        Args:
            z_t: (B, 3l, latent_dim) noisy tokens
            t: (B,) timesteps in [1, T]
            text: (B, text_dim) text features
            keep: (B,) bool, False rows use the null condition
            segment_ids: Override of the per-token segment ids (defaults to [0]*l + [1]*l + [2]*l)

        Returns:
            (B, 3l, latent_dim) predicted noise
        """
        if z_t.ndim != 3 or tuple(z_t.shape[1:]) != self.token_shape:
            raise ShapeMismatch(f"Expected (B, {self.token_shape}) tokens, got {tuple(z_t.shape)}")
        if text.shape != (z_t.shape[0], self.cfg.text_dim):
            raise ShapeMismatch(
                f"Expected text features ({z_t.shape[0]}, {self.cfg.text_dim}), got {tuple(text.shape)}"
            )
        ids = self.segment_ids if segment_ids is None else segment_ids.to(z_t.device)
        c = self.condition(t, text, keep)
        x = self.positional(self.input_proj(z_t), ids, self.segment_positions)

        targets = {target: source for source, target in self.skip_pairs}
        stored = {}
        for index, block in enumerate(self.blocks):
            if index in targets:
                x = self.skip_fusion[str(index)](x, stored.pop(targets[index]))
            x = block(x, c)
            if index < len(self.skip_pairs):
                stored[index] = x
        return self.final(x, c)

    def __repr__(self) -> str:
        return (
            f"LatentDenoiser(layers={self.cfg.layers}, hidden={self.cfg.hidden_dim}, "
            f"tokens={self.token_shape}, skips={len(self.skip_pairs)}, positional={self.cfg.positional})"
        )
