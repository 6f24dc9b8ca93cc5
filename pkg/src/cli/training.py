"""
The two training stages.

Stage 1 fits the DHVAE on z-normalized pairs with the hierarchical ELBO, the
joint-position term and the contact-aware triplet term. Stage 2 freezes it,
encodes every clip once to posterior-mean tokens, fits the token scale s_l
and trains the denoiser on the scaled tokens.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from src.contrastive.triplet import contrastive_step, is_contact
from src.core.config import RunConfig
from src.core.errors import CheckpointMismatch, NonFiniteLoss
from src.core.motion import InteractionPair, SkeletonSpec
from src.core.text import HashedTextEncoder
from src.denoiser.model import LatentDenoiser
from src.denoiser.scaling import TokenScaler, fit_token_scale
from src.dhvae.losses import dhvae_total_loss, elbo_loss, joint_loss
from src.dhvae.model import DHVAE
from src.diffusion.sampler import training_loss
from src.diffusion.schedule import schedule_from_config
from src.motion.normalization import FeatureStats, fit_feature_stats, normalize_array

logger = logging.getLogger(__name__)


def seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def length_batches(pairs: Sequence[InteractionPair], batch_size: int, rng: np.random.Generator) -> List[List[int]]:
    """
    Shuffled index batches in which every clip has the same length.
    """
    by_length: Dict[int, List[int]] = {}
    for index, pair in enumerate(pairs):
        by_length.setdefault(pair.frames, []).append(index)
    batches = []
    for length in sorted(by_length):
        indices = rng.permutation(by_length[length])
        batches.extend(indices[i: i + batch_size].tolist() for i in range(0, len(indices), batch_size))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def stack_pairs(
    pairs: Sequence[InteractionPair], stats: FeatureStats, dtype: torch.dtype = torch.float32
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Normalized (B, N, D) tensors of person a and person b."""
    x_a = np.stack([normalize_array(p.person_a.data, stats) for p in pairs])
    x_b = np.stack([normalize_array(p.person_b.data, stats) for p in pairs])
    return torch.as_tensor(x_a, dtype=dtype), torch.as_tensor(x_b, dtype=dtype)


def check_finite(loss: torch.Tensor, terms: Dict[str, float], dump_path: Optional[Path], context: Dict) -> None:
    """
    Raise NonFiniteLoss, after writing a JSON dump of the terms, if loss is NaN or infinite.
    """
    if torch.isfinite(loss).all():
        return
    if dump_path is not None:
        dump_path = Path(dump_path)
        dump_path.parent.mkdir(parents=True, exist_ok=True)
        dump_path.write_text(
            json.dumps({"terms": {k: repr(v) for k, v in terms.items()}, **context}, indent=2)
        )
        logger.error("Non-finite loss; diagnostics written to %s", dump_path)
    raise NonFiniteLoss(f"Non-finite loss {float(loss)} at {context}")


@dataclass
class TrainingHistory:
    """Per-epoch mean of every logged term."""
    epochs: List[Dict[str, float]] = field(default_factory=list)

    def append(self, epoch: int, sums: Dict[str, float], steps: int) -> Dict[str, float]:
        row = {"epoch": epoch, **{k: v / max(steps, 1) for k, v in sums.items()}}
        self.epochs.append(row)
        return row

    def series(self, key: str) -> List[float]:
        return [row[key] for row in self.epochs if key in row]


@dataclass
class VAETrainingResult:
    model: DHVAE
    stats: FeatureStats
    history: TrainingHistory
    contact: List[bool]


def train_vae(
    pairs: Sequence[InteractionPair],
    config: RunConfig,
    skeleton: SkeletonSpec,
    progress: bool = False,
    dump_path: Optional[Path] = None,
) -> VAETrainingResult:
    """
    Fit a DHVAE on interaction pairs.

    Each step minimizes elbo + joint_weight * joint_l1 + triplet_weight * triplet
    with AdamW and gradient-norm clipping.

    Raises:
        NonFiniteLoss: If any step produces a NaN or infinite loss
    """
    train_cfg = config.training
    generator = seed_everything(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    if not pairs:
        raise ValueError("train_vae needs at least one clip")
    layout = pairs[0].layout

    stats = fit_feature_stats(pairs)
    vae_cfg = replace(config.dhvae, feature_dim=stats.dim)
    config.dhvae.feature_dim = stats.dim
    model = DHVAE(vae_cfg)
    logger.info("Training %r on %d clips", model, len(pairs))

    use_triplet = vae_cfg.triplet_weight > 0 and vae_cfg.use_global_latent
    contact = [
        is_contact(p, skeleton, config.evaluation.voxel_resolution)
        for p in tqdm(pairs, desc="contact labels", disable=not progress)
    ] if use_triplet else [p.contact_annotated for p in pairs]

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=train_cfg.learning_rate, weight_decay=train_cfg.weight_decay
    )
    history = TrainingHistory()

    for epoch in range(1, train_cfg.vae_epochs + 1):
        model.train()
        sums: Dict[str, float] = {}
        steps = 0
        for batch in length_batches(pairs, train_cfg.batch_size, rng):
            batch_pairs = [pairs[i] for i in batch]
            x_a, x_b = stack_pairs(batch_pairs, stats)
            output = model(x_a, x_b, generator=generator)
            elbo, terms = elbo_loss(x_a, x_b, output, vae_cfg.kl_weight)
            joint_term = joint_loss(x_a, x_b, output.recon_a, output.recon_b, stats, layout, skeleton)
            if use_triplet:
                triplet_term, diagnostics = contrastive_step(
                    batch_pairs, model, rng, config.contrastive, stats, [contact[i] for i in batch]
                )
            else:
                triplet_term = x_a.new_zeros(())
                diagnostics = {"d_pos": 0.0, "d_neg": 0.0}
            total = dhvae_total_loss(elbo, joint_term, triplet_term, vae_cfg)

            logged = {
                "total": float(total.detach()),
                **terms.as_dict(),
                "joint": float(joint_term.detach()),
                "triplet": float(triplet_term.detach()),
                "d_pos": diagnostics["d_pos"],
                "d_neg": diagnostics["d_neg"],
            }
            check_finite(total, logged, dump_path, {"stage": "vae", "epoch": epoch, "step": steps})

            optimizer.zero_grad()
            total.backward()
            if train_cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            optimizer.step()

            for key, value in logged.items():
                sums[key] = sums.get(key, 0.0) + value
            steps += 1

        row = history.append(epoch, sums, steps)
        logger.info(
            "vae epoch %d: total %.4f recon %.4f/%.4f kl %.3f/%.3f/%.3f joint %.4f triplet %.4f",
            epoch, row["total"], row["recon_a"], row["recon_b"],
            row["kl_a"], row["kl_b"], row["kl_o"], row["joint"], row["triplet"],
        )

    model.eval()
    return VAETrainingResult(model=model, stats=stats, history=history, contact=contact)


@torch.no_grad()
def encode_latents(
    model: DHVAE, pairs: Sequence[InteractionPair], stats: FeatureStats, batch_size: int = 64
) -> torch.Tensor:
    """
    Posterior-mean tokens [z_o, z_a, z_b] of every clip, (n, 3l, d), in dataset order.
    """
    model.eval()
    tokens = [None] * len(pairs)
    for batch in length_batches(pairs, batch_size, np.random.default_rng(0)):
        x_a, x_b = stack_pairs([pairs[i] for i in batch], stats)
        encoded = model.latent_means(x_a, x_b).to_tokens()
        for row, index in enumerate(batch):
            tokens[index] = encoded[row]
    return torch.stack(tokens)


@dataclass
class DenoiserTrainingResult:
    model: LatentDenoiser
    scaler: TokenScaler
    history: TrainingHistory
    latents: torch.Tensor


def train_denoiser(
    pairs: Sequence[InteractionPair],
    vae: DHVAE,
    stats: FeatureStats,
    config: RunConfig,
    progress: bool = False,
    dump_path: Optional[Path] = None,
) -> DenoiserTrainingResult:
    """
    Train the latent denoiser against a frozen DHVAE.

    Raises:
        CheckpointMismatch: If the DHVAE was trained on another feature dimension
        NonFiniteLoss: If any step produces a NaN or infinite loss
    """
    if vae.cfg.feature_dim != stats.dim:
        raise CheckpointMismatch(
            f"DHVAE expects {vae.cfg.feature_dim} channels, stats describe {stats.dim}"
        )
    train_cfg = config.training
    generator = seed_everything(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    for parameter in vae.parameters():
        parameter.requires_grad_(False)

    latents = encode_latents(vae, pairs, stats)
    l = vae.cfg.latent_tokens
    if config.denoiser.token_scaling:
        scale = fit_token_scale(latents[:, :l], latents[:, l: 2 * l], latents[:, 2 * l:])
    else:
        scale = 1.0
    config.denoiser.token_scale = scale
    scaler = TokenScaler(scale=scale, latent_tokens=l)
    targets = scaler.scale_tokens(latents)

    encoder = HashedTextEncoder(dim=config.denoiser.text_dim, seed=config.dataset.seed)
    text = torch.as_tensor(encoder.encode_batch([p.text for p in pairs]), dtype=torch.float32)

    schedule = schedule_from_config(config.diffusion)
    model = LatentDenoiser(config.denoiser, vae.cfg.latent_dim, l, schedule.T)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=train_cfg.learning_rate, weight_decay=train_cfg.weight_decay
    )
    logger.info("Training %r on %d latent sets (s_l=%.4f)", model, len(pairs), scale)

    history = TrainingHistory()
    for epoch in range(1, train_cfg.denoiser_epochs + 1):
        model.train()
        total, steps = 0.0, 0
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), train_cfg.batch_size):
            batch = torch.as_tensor(order[start: start + train_cfg.batch_size])
            loss = training_loss(model, targets[batch], text[batch], schedule, config.diffusion, generator)
            check_finite(loss, {"eps_mse": float(loss.detach())}, dump_path,
                         {"stage": "denoiser", "epoch": epoch, "step": steps})
            optimizer.zero_grad()
            loss.backward()
            if train_cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            optimizer.step()
            total += float(loss.detach())
            steps += 1
        row = history.append(epoch, {"eps_mse": total}, steps)
        logger.info("denoiser epoch %d: eps_mse %.4f", epoch, row["eps_mse"])

    model.eval()
    return DenoiserTrainingResult(model=model, scaler=scaler, history=history, latents=latents)
