"""
Implementation of the command-line verbs.

Each cmd_* function takes a RunConfig plus file paths, does its work, prints a
short summary and returns what it produced so tests can inspect it without
going through argparse.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.cli.plots import plot_history, plot_interaction, plot_metric_sweep
from src.cli.training import (
    DenoiserTrainingResult,
    VAETrainingResult,
    encode_latents,
    train_denoiser,
    train_vae,
)
from src.core.config import RunConfig
from src.core.errors import CheckpointMismatch, LayoutMismatch
from src.core.motion import InteractionPair, MotionLayout, MotionSequence, SkeletonSpec
from src.core.text import HashedTextEncoder
from src.data.storage import (
    DatasetFile,
    check_compatible,
    dataset_metadata,
    load_dataset_file,
    save_dataset,
)
from src.data.synthetic import CONTACT_FAMILIES, family_of_text, synth_dataset
from src.denoiser.model import LatentDenoiser
from src.denoiser.scaling import TokenScaler
from src.dhvae.checkpoint import (
    DENOISER_KIND,
    VAE_KIND,
    load_state,
    read_checkpoint,
    save_checkpoint,
)
from src.dhvae.model import DHVAE
from src.dhvae.posterior import LatentTriple
from src.diffusion.sampler import sample
from src.diffusion.schedule import schedule_from_config
from src.metrics.features import RandomProjectionExtractor
from src.metrics.fidelity import evaluate_generation, feature_l1, mpjpe
from src.metrics.latent_stats import latent_statistics
from src.motion.normalization import FeatureStats, denormalize_array, fit_feature_stats
from src.motion.skeleton import load_skeleton
from src.physics.penetration import evaluate_physics

logger = logging.getLogger(__name__)


def _skeleton_for(dataset: DatasetFile, config: RunConfig) -> SkeletonSpec:
    """
    The dataset's recorded skeleton, falling back to the configured one.

    Raises:
        LayoutMismatch: If the configured skeleton differs from the recorded hash
    """
    skeleton = load_skeleton(dataset.skeleton_name or config.dataset.skeleton)
    if dataset.skeleton_hash and skeleton.content_hash() != dataset.skeleton_hash:
        raise LayoutMismatch(
            f"Skeleton '{skeleton.name}' does not match the one the dataset was written with"
        )
    return skeleton


def _load_pairs(path: Path) -> DatasetFile:
    dataset = load_dataset_file(path)
    if not dataset.pairs:
        raise ValueError(f"{path}: dataset is empty")
    return dataset


# -- synth ----------------------------------------------------------------


def cmd_synth(config: RunConfig, out_path: Path) -> DatasetFile:
    """
    Write a synthetic interaction dataset and print its summary.
    """
    ds = config.dataset
    skeleton = load_skeleton(ds.skeleton)
    layout = MotionLayout(ds.layout)
    pairs = synth_dataset(ds.seed, ds.count, skeleton, layout, (ds.frame_min, ds.frame_max), ds.fps)
    metadata = {"seed": ds.seed, "source": "synthetic", "fps": ds.fps}
    save_dataset(out_path, pairs, skeleton, layout, metadata)

    contact = float(np.mean([p.contact_annotated for p in pairs]))
    print(f"Wrote {len(pairs)} clips to {out_path}")
    print(f"  layout: {layout.value} (D={pairs[0].person_a.dim}), skeleton: {skeleton.name}")
    print(f"  contact fraction: {contact:.3f}")
    return DatasetFile(pairs, layout, skeleton.name, skeleton.content_hash(), metadata)


# -- training -------------------------------------------------------------


def cmd_train_vae(
    config: RunConfig, dataset_path: Path, out_path: Path, progress: bool = False
) -> VAETrainingResult:
    """
    Train the DHVAE and write a checkpoint carrying the config and feature stats.
    """
    dataset = _load_pairs(dataset_path)
    skeleton = _skeleton_for(dataset, config)
    out_path = Path(out_path)

    result = train_vae(
        dataset.pairs, config, skeleton, progress=progress,
        dump_path=out_path.with_suffix(".nonfinite.json"),
    )
    extras = {
        "stats": result.stats.to_dict(),
        "layout": dataset.layout.value,
        "skeleton_name": skeleton.name,
        "skeleton_hash": skeleton.content_hash(),
        "history": result.history.epochs,
    }
    save_checkpoint(out_path, result.model, VAE_KIND, config.to_dict(), extras)

    last = result.history.epochs[-1] if result.history.epochs else {}
    print(f"Trained {result.model!r}")
    if last:
        print(f"  final loss {last['total']:.4f} (triplet {last['triplet']:.4f})")
    print(f"  checkpoint: {out_path}")
    return result


@dataclass
class LoadedVAE:
    model: DHVAE
    stats: FeatureStats
    config: RunConfig
    layout: MotionLayout
    skeleton_name: str
    skeleton_hash: str


def load_vae(path: Path) -> LoadedVAE:
    """
    Rebuild a DHVAE from its checkpoint.

    Raises:
        CheckpointMismatch: If the file is not a DHVAE checkpoint or its tensors
                            do not fit the recorded config
    """
    header, arrays = read_checkpoint(path, VAE_KIND)
    config = RunConfig.from_dict(header["config"])
    extras = header["extras"]
    model = DHVAE(config.dhvae)
    load_state(model, arrays, str(path))
    model.eval()
    return LoadedVAE(
        model=model,
        stats=FeatureStats.from_dict(extras["stats"]),
        config=config,
        layout=MotionLayout(extras["layout"]),
        skeleton_name=extras.get("skeleton_name", ""),
        skeleton_hash=extras.get("skeleton_hash", ""),
    )


def cmd_train_denoiser(
    config: RunConfig, dataset_path: Path, vae_path: Path, out_path: Path, progress: bool = False
) -> DenoiserTrainingResult:
    """
    Train the latent denoiser against a frozen DHVAE checkpoint.

    Raises:
        CheckpointMismatch: If the dataset and the DHVAE disagree on layout or dimensions
    """
    dataset = _load_pairs(dataset_path)
    vae = load_vae(vae_path)
    if dataset.layout is not vae.layout or dataset.pairs[0].person_a.dim != vae.stats.dim:
        raise CheckpointMismatch(
            f"{vae_path} was trained on {vae.layout.value} (D={vae.stats.dim}), dataset is "
            f"{dataset.layout.value} (D={dataset.pairs[0].person_a.dim})"
        )
    config.dhvae = vae.config.dhvae
    out_path = Path(out_path)

    result = train_denoiser(
        dataset.pairs, vae.model, vae.stats, config, progress=progress,
        dump_path=out_path.with_suffix(".nonfinite.json"),
    )
    extras = {
        "token_scale": result.scaler.scale,
        "latent_dim": vae.model.cfg.latent_dim,
        "latent_tokens": vae.model.cfg.latent_tokens,
        "timesteps": config.diffusion.timesteps,
        "vae_checkpoint": str(vae_path),
        "history": result.history.epochs,
    }
    save_checkpoint(out_path, result.model, DENOISER_KIND, config.to_dict(), extras)
    print(f"Trained {result.model!r}")
    print(f"  s_l = {result.scaler.scale:.4f}, checkpoint: {out_path}")
    return result


@dataclass
class LoadedDenoiser:
    model: LatentDenoiser
    scaler: TokenScaler
    config: RunConfig


def load_denoiser(path: Path, vae: Optional[DHVAE] = None) -> LoadedDenoiser:
    """
    Rebuild a denoiser from its checkpoint.

    Raises:
        CheckpointMismatch: If the latent shape recorded in the checkpoint differs from vae's
    """
    header, arrays = read_checkpoint(path, DENOISER_KIND)
    config = RunConfig.from_dict(header["config"])
    extras = header["extras"]
    if vae is not None and (
        extras["latent_dim"] != vae.cfg.latent_dim or extras["latent_tokens"] != vae.cfg.latent_tokens
    ):
        raise CheckpointMismatch(
            f"{path} denoises {extras['latent_tokens']}x{extras['latent_dim']} latents, DHVAE "
            f"produces {vae.cfg.latent_tokens}x{vae.cfg.latent_dim}"
        )
    model = LatentDenoiser(config.denoiser, extras["latent_dim"], extras["latent_tokens"], extras["timesteps"])
    load_state(model, arrays, str(path))
    model.eval()
    scaler = TokenScaler(scale=extras["token_scale"], latent_tokens=extras["latent_tokens"])
    return LoadedDenoiser(model=model, scaler=scaler, config=config)


# -- sampling -------------------------------------------------------------


@torch.no_grad()
def generate_pairs(
    vae: LoadedVAE,
    denoiser: LoadedDenoiser,
    texts: Sequence[str],
    frames: int,
    seed: int = 0,
    cfg_scale: Optional[float] = None,
    steps: Optional[int] = None,
    progress: bool = False,
) -> List[InteractionPair]:
    """
    Text -> latent triple (DDIM with guidance) -> decoded, denormalized pairs.
    """
    config = denoiser.config
    encoder = HashedTextEncoder(dim=config.denoiser.text_dim, seed=config.dataset.seed)
    text = torch.as_tensor(encoder.encode_batch(list(texts)), dtype=torch.float32)
    tokens = sample(
        denoiser.model, text, denoiser.model.token_shape, config.diffusion, seed,
        schedule_from_config(config.diffusion), denoiser.scaler, cfg_scale, steps, progress,
    )
    recon_a, recon_b = vae.model.decode(LatentTriple.from_tokens(tokens), frames)

    pairs = []
    for i, caption in enumerate(texts):
        people = [
            MotionSequence(
                layout=vae.layout,
                data=denormalize_array(recon[i].double().numpy(), vae.stats),
            )
            for recon in (recon_a, recon_b)
        ]
        pairs.append(
            InteractionPair(
                person_a=people[0],
                person_b=people[1],
                text=caption,
                contact_annotated=family_of_text(caption) in CONTACT_FAMILIES,
            )
        )
    return pairs


def cmd_sample(
    vae_path: Path,
    denoiser_path: Path,
    texts: Sequence[str],
    out_path: Path,
    count: int = 1,
    seed: int = 0,
    cfg_scale: Optional[float] = None,
    steps: Optional[int] = None,
    frames: Optional[int] = None,
    plot_dir: Optional[Path] = None,
    progress: bool = False,
) -> List[InteractionPair]:
    """
    Sample count clips per text and write them as a dataset file.

    The guidance scale, step count and seed go into the file metadata so
    eval --sweep can group files by scale.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    vae = load_vae(vae_path)
    denoiser = load_denoiser(denoiser_path, vae.model)
    diffusion = denoiser.config.diffusion
    scale = diffusion.cfg_scale if cfg_scale is None else cfg_scale
    steps = diffusion.inference_steps if steps is None else steps
    frames = frames or vae.config.dataset.frame_max

    captions = [text for text in texts for _ in range(count)]
    pairs = generate_pairs(vae, denoiser, captions, frames, seed, scale, steps, progress)

    skeleton = load_skeleton(vae.skeleton_name or vae.config.dataset.skeleton)
    metadata = {"source": "sampled", "seed": seed, "cfg_scale": scale, "steps": steps, "frames": frames}
    save_dataset(out_path, pairs, skeleton, vae.layout, metadata)
    print(f"Sampled {len(pairs)} clips (guidance {scale}, {steps} steps) to {out_path}")

    if plot_dir is not None:
        for i, pair in enumerate(pairs):
            plot_interaction(pair, skeleton, Path(plot_dir) / f"sample_{i:03d}.png")
    return pairs


# -- evaluation -----------------------------------------------------------


def _reconstruction_section(
    generated: DatasetFile, reference: DatasetFile, skeleton: SkeletonSpec, stats: FeatureStats
) -> Optional[Dict]:
    """MPJPE and feature L1 when both files hold the same clips frame for frame."""
    if len(generated.pairs) != len(reference.pairs):
        return None
    for gen, ref in zip(generated.pairs, reference.pairs):
        if gen.frames != ref.frames or gen.text != ref.text:
            return None
    return {
        "mpjpe": mpjpe(reference.pairs, generated.pairs, skeleton),
        "feature_l1": feature_l1(reference.pairs, generated.pairs, stats),
    }


def evaluate_files(
    generated: DatasetFile,
    reference: DatasetFile,
    config: RunConfig,
    fidelity: bool = True,
    physics: bool = True,
    vae: Optional[LoadedVAE] = None,
    progress: bool = False,
) -> Dict:
    """
    Report sections for one generated file against a reference file.

    Raises:
        LayoutMismatch: If the files differ in layout or skeleton
    """
    check_compatible(generated, reference)
    skeleton = _skeleton_for(reference, config)
    report: Dict = {
        "generated_metadata": generated.metadata,
        "counts": {"generated": len(generated.pairs), "reference": len(reference.pairs)},
    }
    ev = config.evaluation

    if fidelity:
        stats = fit_feature_stats(reference.pairs)
        extractor = RandomProjectionExtractor(ev.feature_dim, ev.feature_frames, stats, ev.seed)
        extractor.fit_alignment(reference.pairs)
        report["fidelity"] = evaluate_generation(generated.pairs, reference.pairs, extractor, ev).to_dict()
        reconstruction = _reconstruction_section(generated, reference, skeleton, stats)
        if reconstruction is not None:
            report["reconstruction"] = reconstruction
        if vae is not None:
            report["latent_statistics"] = _latent_section(vae, generated.pairs)

    if physics:
        report["physics"] = evaluate_physics(generated.pairs, skeleton, ev, progress).to_dict()
    return report


def _latent_section(vae: LoadedVAE, pairs: Sequence[InteractionPair]) -> Optional[Dict]:
    tokens = encode_latents(vae.model, pairs, vae.stats).double().numpy()
    l = vae.model.cfg.latent_tokens
    segments = {"o": tokens[:, :l], "a": tokens[:, l: 2 * l], "b": tokens[:, 2 * l:]}
    if tokens.shape[0] * l < 2:
        return None
    return latent_statistics(segments).to_dict()


def cmd_eval(
    config: RunConfig,
    reference_path: Path,
    out_path: Path,
    generated_path: Optional[Path] = None,
    fidelity: bool = True,
    physics: bool = True,
    sweep_dir: Optional[Path] = None,
    vae_path: Optional[Path] = None,
    progress: bool = False,
) -> Dict:
    """
    Evaluate a generated file, a sweep directory of generated files, or both.

    With sweep_dir, every *.duet file in it is evaluated and a metric-vs-guidance
    plot is written next to the JSON report.
    """
    if generated_path is None and sweep_dir is None:
        raise ValueError("cmd_eval needs a generated file or a sweep directory")
    if not (fidelity or physics):
        raise ValueError("cmd_eval needs at least one of fidelity and physics")
    reference = _load_pairs(reference_path)
    vae = load_vae(vae_path) if vae_path is not None else None
    out_path = Path(out_path)
    result: Dict = {}

    if generated_path is not None:
        generated = _load_pairs(generated_path)
        result = evaluate_files(generated, reference, config, fidelity, physics, vae, progress)
        _print_report(result)

    if sweep_dir is not None:
        rows, per_file = sweep_reports(Path(sweep_dir), reference, config, fidelity, physics, progress)
        plot_path = out_path.with_name(out_path.stem + "_sweep.png")
        series = plot_metric_sweep(rows, plot_path)
        result["sweep"] = {"rows": rows, "files": per_file, "plot": str(plot_path), "metrics": sorted(series)}
        print(f"Sweep over {len(rows)} guidance scales plotted to {plot_path}")

    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(result, indent=2))
    print(f"Report written to {out_path}")
    return result


SWEEP_METRICS = (
    ("fidelity", "fid"),
    ("fidelity", "diversity"),
    ("fidelity", "multimodality"),
    ("fidelity", "mm_dist"),
    ("fidelity", "r_precision"),
    ("physics", "pv"),
    ("physics", "pfr"),
    ("physics", "pdr"),
    ("physics", "contact_ratio"),
)


def sweep_reports(
    sweep_dir: Path,
    reference: DatasetFile,
    config: RunConfig,
    fidelity: bool,
    physics: bool,
    progress: bool = False,
) -> Tuple[List[Dict], Dict[str, Dict]]:
    """
    One flat metric row per sample file in sweep_dir, sorted by guidance scale.

    Raises:
        ValueError: If a file lacks cfg_scale metadata or the directory holds no files
    """
    files = sorted(sweep_dir.glob("*.duet"))
    if not files:
        raise ValueError(f"No .duet sample files in {sweep_dir}")
    rows, per_file = [], {}
    for path in files:
        if "cfg_scale" not in dataset_metadata(path):
            raise ValueError(f"{path}: no cfg_scale in metadata")
        generated = _load_pairs(path)
        report = evaluate_files(generated, reference, config, fidelity, physics, progress=progress)
        row = {"cfg_scale": float(generated.metadata["cfg_scale"])}
        for section, key in SWEEP_METRICS:
            if section in report:
                row[key] = report[section].get(key)
        rows.append(row)
        per_file[path.name] = report
    rows.sort(key=lambda r: r["cfg_scale"])
    return rows, per_file


def _print_report(report: Dict) -> None:
    if "fidelity" in report:
        f = report["fidelity"]
        rp = f.get("r_precision")
        print("Fidelity:")
        print(f"  FID {f['fid']}, diversity {f['diversity']}, MModality {f['multimodality']}")
        print(f"  MM-Dist {f['mm_dist']}, R-precision {rp}")
    if "reconstruction" in report:
        r = report["reconstruction"]
        print(f"Reconstruction: MPJPE {r['mpjpe']:.4f} m, feature L1 {r['feature_l1']:.4f}")
    if "physics" in report:
        p = report["physics"]
        print("Physics:")
        print(f"  PV {p['pv']:.2f}, PFR {p['pfr']:.3f}, PDR {p['pdr']:.3f}, contact ratio {p['contact_ratio']}")


# -- plot -----------------------------------------------------------------


def cmd_plot(
    config: RunConfig,
    out_dir: Path,
    dataset_path: Optional[Path] = None,
    checkpoint_path: Optional[Path] = None,
    limit: int = 4,
) -> List[Path]:
    """
    Trajectory/skeleton figures for the first clips of a dataset file, and loss
    curves for a checkpoint's training history.
    """
    if dataset_path is None and checkpoint_path is None:
        raise ValueError("cmd_plot needs a dataset file or a checkpoint")
    out_dir = Path(out_dir)
    written = []
    if dataset_path is not None:
        dataset = _load_pairs(dataset_path)
        skeleton = _skeleton_for(dataset, config)
        for i, pair in enumerate(dataset.pairs[:limit]):
            written.append(plot_interaction(pair, skeleton, out_dir / f"{Path(dataset_path).stem}_{i:03d}.png"))
    if checkpoint_path is not None:
        header, _ = _read_any_checkpoint(Path(checkpoint_path))
        history = header["extras"].get("history", [])
        if history:
            written.append(plot_history(history, out_dir / f"{Path(checkpoint_path).stem}_history.png"))
        else:
            logger.warning("%s has no training history", checkpoint_path)
    print(f"Wrote {len(written)} figure(s) to {out_dir}")
    return written


def _read_any_checkpoint(path: Path):
    try:
        return read_checkpoint(path, VAE_KIND)
    except CheckpointMismatch:
        return read_checkpoint(path, DENOISER_KIND)
