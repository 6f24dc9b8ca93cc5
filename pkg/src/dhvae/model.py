"""
Disentangled hierarchical VAE over two-person motion.

Encoding:
    each person's frames are prefixed with 2l learnable tokens (u_a or u_b) and run
    through a shared Transformer encoder. The first l token slots give the mean and
    the next l the log-variance of z_a / z_b; the frame slots are the temporal
    embedding. A CoTransformer then lets each person's embedding attend to the
    other's, the two outputs are pooled symmetrically, concatenated with the global
    token u_o and mapped to the posterior of z_o.

Decoding:
    z_o is expanded by an interaction decoder into an N-frame memory; a person
    decoder turns [z_i tokens, N positional queries] into N x D motion while
    cross-attending to that memory.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn

from src.core.config import DHVAEConfig
from src.core.errors import ShapeMismatch
from src.dhvae.posterior import GaussianPosterior, LatentTriple, reparameterize

logger = logging.getLogger(__name__)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class PersonEncoder(nn.Module):
    """
    Transformer encoder with 2l prepended posterior tokens.
    """

    def __init__(self, cfg: DHVAEConfig):
        super().__init__()
        l = cfg.latent_tokens
        self.latent_tokens = l
        self.input_proj = nn.Linear(cfg.feature_dim, cfg.hidden_dim)
        self.position = nn.Parameter(torch.zeros(cfg.max_frames + 2 * l, cfg.hidden_dim))
        layer = nn.TransformerEncoderLayer(
            cfg.hidden_dim, cfg.heads, 4 * cfg.hidden_dim, cfg.dropout,
            activation="gelu", batch_first=True, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, cfg.enc_layers_individual, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(cfg.hidden_dim)
        self.mean_head = nn.Linear(cfg.hidden_dim, cfg.latent_dim)
        self.logvar_head = nn.Linear(cfg.hidden_dim, cfg.latent_dim)

    def forward(self, x: torch.Tensor, tokens: torch.Tensor) -> Tuple[GaussianPosterior, torch.Tensor]:
        batch, frames, _ = x.shape
        l = self.latent_tokens
        seq = torch.cat([tokens.expand(batch, -1, -1), self.input_proj(x)], dim=1)
        seq = seq + self.position[: frames + 2 * l]
        out = self.norm(self.encoder(seq))
        posterior = GaussianPosterior.from_raw(
            self.mean_head(out[:, :l]), self.logvar_head(out[:, l:2 * l])
        )
        return posterior, out[:, 2 * l:]


class CoTransformerLayer(nn.Module):
    """
    One cross-attention exchange; the same weights serve both branches.

        x' = x + CrossAttn(LN(x), LN(y))
        x'' = x' + FF(LN(x'))
    """

    def __init__(self, hidden: int, heads: int, dropout: float):
        super().__init__()
        self.norm_q = nn.LayerNorm(hidden)
        self.norm_kv = nn.LayerNorm(hidden)
        self.attn = nn.MultiheadAttention(hidden, heads, dropout=dropout, batch_first=True)
        self.norm_ff = nn.LayerNorm(hidden)
        self.ff = nn.Sequential(
            nn.Linear(hidden, 4 * hidden), nn.GELU(), nn.Dropout(dropout), nn.Linear(4 * hidden, hidden)
        )
        self.dropout = nn.Dropout(dropout)

    def branch(self, x: torch.Tensor, other: torch.Tensor) -> torch.Tensor:
        kv = self.norm_kv(other)
        attended, _ = self.attn(self.norm_q(x), kv, kv, need_weights=False)
        x = x + self.dropout(attended)
        return x + self.dropout(self.ff(self.norm_ff(x)))

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.branch(a, b), self.branch(b, a)


class ResidualMLPLayer(nn.Module):
    """Per-branch residual MLP; the no-cross-attention fusion ablation."""

    def __init__(self, hidden: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(hidden)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, 4 * hidden), nn.GELU(), nn.Dropout(dropout), nn.Linear(4 * hidden, hidden)
        )

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return a + self.mlp(self.norm(a)), b + self.mlp(self.norm(b))


class PersonDecoder(nn.Module):
    """
    [z_i tokens, positional queries] -> N x D, cross-attending to the interaction memory.
    """

    def __init__(self, cfg: DHVAEConfig):
        super().__init__()
        self.latent_proj = nn.Linear(cfg.latent_dim, cfg.hidden_dim)
        self.queries = nn.Parameter(torch.zeros(cfg.max_frames, cfg.hidden_dim))
        self.position = nn.Parameter(torch.zeros(cfg.max_frames + cfg.latent_tokens, cfg.hidden_dim))
        layer = nn.TransformerDecoderLayer(
            cfg.hidden_dim, cfg.heads, 4 * cfg.hidden_dim, cfg.dropout,
            activation="gelu", batch_first=True, norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(layer, cfg.dec_layers)
        self.norm = nn.LayerNorm(cfg.hidden_dim)
        self.output = nn.Linear(cfg.hidden_dim, cfg.feature_dim)

    def forward(self, z: torch.Tensor, memory: torch.Tensor, frames: int) -> torch.Tensor:
        batch, l, _ = z.shape
        tgt = torch.cat([self.latent_proj(z), self.queries[:frames].expand(batch, -1, -1)], dim=1)
        tgt = tgt + self.position[: l + frames]
        out = self.norm(self.decoder(tgt, memory))
        return self.output(out[:, l:])


@dataclass
class DHVAEOutput:
    """
    Result of a full forward pass.

    recon_a, recon_b: (B, N, D) reconstructions in normalized feature space
    triple: the latents used for decoding, with their posteriors
    """
    recon_a: torch.Tensor
    recon_b: torch.Tensor
    triple: LatentTriple


class DHVAE(nn.Module):
    """
    Disentangled hierarchical VAE.

    Args:
        cfg: DHVAEConfig with feature_dim resolved (> 0)

    Examples:
        >>> cfg = DHVAEConfig(feature_dim=94, latent_dim=16, hidden_dim=32, max_frames=16)
        >>> model = DHVAE(cfg).eval()
        >>> out = model(torch.zeros(2, 8, 94), torch.zeros(2, 8, 94))
        >>> tuple(out.recon_a.shape)
        (2, 8, 94)
    """

    def __init__(self, cfg: DHVAEConfig):
        super().__init__()
        cfg.validate()
        if cfg.feature_dim <= 0:
            raise ShapeMismatch(f"feature_dim must be resolved before building, got {cfg.feature_dim}")
        self.cfg = cfg
        l, h = cfg.latent_tokens, cfg.hidden_dim

        self.u_a = nn.Parameter(torch.zeros(1, 2 * l, h))
        self.u_b = nn.Parameter(torch.zeros(1, 2 * l, h))
        self.u_o = nn.Parameter(torch.zeros(1, l, h))

        self.encoder_a = PersonEncoder(cfg)
        self.encoder_b = self.encoder_a if cfg.share_person_weights else PersonEncoder(cfg)

        if cfg.fusion == "cotransformer":
            fusion = [CoTransformerLayer(h, cfg.heads, cfg.dropout) for _ in range(cfg.cotransformer_layers)]
        else:
            fusion = [ResidualMLPLayer(h, cfg.dropout) for _ in range(cfg.cotransformer_layers)]
        self.fusion = nn.ModuleList(fusion)
        self.fusion_norm = nn.LayerNorm(h)
        self.z_o_head = nn.Sequential(nn.Linear(3 * h, h), nn.GELU(), nn.Linear(h, 2 * cfg.latent_dim))

        self.interaction_latent = nn.Linear(cfg.latent_dim, h)
        self.interaction_queries = nn.Parameter(torch.zeros(cfg.max_frames, h))
        inter_layer = nn.TransformerDecoderLayer(
            h, cfg.heads, 4 * h, cfg.dropout, activation="gelu", batch_first=True, norm_first=True
        )
        self.interaction_decoder = nn.TransformerDecoder(inter_layer, cfg.cotransformer_layers)
        self.interaction_norm = nn.LayerNorm(h)

        self.decoder_a = PersonDecoder(cfg)
        self.decoder_b = self.decoder_a if cfg.share_person_weights else PersonDecoder(cfg)

        self.apply(_init_weights)
        for param in (
            self.u_a, self.u_b, self.u_o, self.interaction_queries,
            self.encoder_a.position, self.decoder_a.queries, self.decoder_a.position,
            self.encoder_b.position, self.decoder_b.queries, self.decoder_b.position,
        ):
            nn.init.trunc_normal_(param, std=0.02)
        nn.init.zeros_(self.z_o_head[-1].weight)
        nn.init.zeros_(self.z_o_head[-1].bias)

    # -- encoding ---------------------------------------------------------

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 3 or x.shape[-1] != self.cfg.feature_dim:
            raise ShapeMismatch(
                f"Expected (B, N, {self.cfg.feature_dim}) motion, got {tuple(x.shape)}"
            )
        if not 1 <= x.shape[1] <= self.cfg.max_frames:
            raise ShapeMismatch(f"Clip length {x.shape[1]} outside [1, {self.cfg.max_frames}]")

    def encode_individual(self, x: torch.Tensor, person: str) -> Tuple[GaussianPosterior, torch.Tensor]:
        """
        Posterior of z_a (person="a") or z_b (person="b") and the (B, N, hidden) temporal embedding.
        """
        self._check_input(x)
        if person == "a":
            return self.encoder_a(x, self.u_a)
        if person == "b":
            return self.encoder_b(x, self.u_b)
        raise ValueError(f"person must be 'a' or 'b', got {person}")

    def cotransformer_fuse(self, emb_a: torch.Tensor, emb_b: torch.Tensor) -> GaussianPosterior:
        """
        Posterior of z_o from the two temporal embeddings.

        Pooling is symmetric in the two persons: (mean, product) of the
        time-averaged branch outputs.
        """
        if emb_a.shape != emb_b.shape:
            raise ShapeMismatch(f"Embeddings differ: {tuple(emb_a.shape)} vs {tuple(emb_b.shape)}")
        a, b = self.fuse_outputs(emb_a, emb_b)
        pool_a = self.fusion_norm(a).mean(dim=1)
        pool_b = self.fusion_norm(b).mean(dim=1)
        pooled = torch.cat([0.5 * (pool_a + pool_b), pool_a * pool_b], dim=-1)

        batch = pooled.shape[0]
        l = self.cfg.latent_tokens
        features = torch.cat([pooled[:, None, :].expand(-1, l, -1), self.u_o.expand(batch, -1, -1)], dim=-1)
        mean, log_variance = self.z_o_head(features).chunk(2, dim=-1)
        return GaussianPosterior.from_raw(mean, log_variance)

    def fuse_outputs(self, emb_a: torch.Tensor, emb_b: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Final CoTransformer branch outputs (before pooling)."""
        a, b = emb_a, emb_b
        for layer in self.fusion:
            a, b = layer(a, b)
        return a, b

    def encode(self, x_a: torch.Tensor, x_b: torch.Tensor) -> Dict[str, GaussianPosterior]:
        """Posteriors {"a", "b", "o"} of one batch of pairs."""
        post_a, emb_a = self.encode_individual(x_a, "a")
        post_b, emb_b = self.encode_individual(x_b, "b")
        if self.cfg.use_global_latent:
            post_o = self.cotransformer_fuse(emb_a, emb_b)
        else:
            post_o = GaussianPosterior(torch.zeros_like(post_a.mean), torch.zeros_like(post_a.mean))
        return {"a": post_a, "b": post_b, "o": post_o}

    def encode_interaction(self, x_a: torch.Tensor, x_b: torch.Tensor) -> torch.Tensor:
        """Posterior mean of z_o."""
        return self.encode(x_a, x_b)["o"].mean

    def latent_means(self, x_a: torch.Tensor, x_b: torch.Tensor) -> LatentTriple:
        """Posterior means as a LatentTriple (the diffusion targets)."""
        posts = self.encode(x_a, x_b)
        return LatentTriple(z_o=posts["o"].mean, z_a=posts["a"].mean, z_b=posts["b"].mean, posteriors=posts)

    # -- decoding ---------------------------------------------------------

    def interaction_memory(self, z_o: torch.Tensor, frames: int) -> torch.Tensor:
        batch = z_o.shape[0]
        queries = self.interaction_queries[:frames].expand(batch, -1, -1)
        if not self.cfg.use_global_latent:
            return queries
        memory = self.interaction_decoder(queries, self.interaction_latent(z_o))
        return self.interaction_norm(memory)

    def decode(self, triple: LatentTriple, frames: int) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Decode a latent triple into two (B, frames, D) reconstructions.
        """
        if triple.z_o.shape[-1] != self.cfg.latent_dim or triple.latent_tokens != self.cfg.latent_tokens:
            raise ShapeMismatch(
                f"Latents {tuple(triple.z_o.shape)} do not match "
                f"(l={self.cfg.latent_tokens}, d={self.cfg.latent_dim})"
            )
        if not 1 <= frames <= self.cfg.max_frames:
            raise ShapeMismatch(f"frames {frames} outside [1, {self.cfg.max_frames}]")
        memory = self.interaction_memory(triple.z_o, frames)
        return self.decoder_a(triple.z_a, memory, frames), self.decoder_b(triple.z_b, memory, frames)

    def forward(
        self,
        x_a: torch.Tensor,
        x_b: torch.Tensor,
        sample: Optional[bool] = None,
        generator: Optional[torch.Generator] = None,
    ) -> DHVAEOutput:
        """
        Encode, draw latents and decode.

        Args:
            sample: Reparameterized draw (default: training mode) or posterior means
            generator: Optional generator for the draw
        """
        if sample is None:
            sample = self.training
        posts = self.encode(x_a, x_b)
        if sample:
            z = {k: reparameterize(p, generator=generator) for k, p in posts.items()}
            if not self.cfg.use_global_latent:
                z["o"] = posts["o"].mean
        else:
            z = {k: p.mean for k, p in posts.items()}
        triple = LatentTriple(z_o=z["o"], z_a=z["a"], z_b=z["b"], posteriors=posts)
        recon_a, recon_b = self.decode(triple, x_a.shape[1])
        return DHVAEOutput(recon_a=recon_a, recon_b=recon_b, triple=triple)

    def __repr__(self) -> str:
        params = sum(p.numel() for p in self.parameters())
        return (
            f"DHVAE(D={self.cfg.feature_dim}, latent={self.cfg.latent_tokens}x{self.cfg.latent_dim}, "
            f"hidden={self.cfg.hidden_dim}, fusion={self.cfg.fusion}, params={params})"
        )
