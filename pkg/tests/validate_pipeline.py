"""
Training-based validation of the full pipeline on the toy skeleton.

These runs take minutes on a CPU and are deselected by default; run them with

    pytest -m slow tests/validate_pipeline.py

or directly with `python tests/validate_pipeline.py` for a printed report.
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from src.cli import commands
from src.cli.training import stack_pairs, train_vae
from src.contrastive.triplet import contrastive_step, is_contact
from src.core.config import load_run_config
from src.core.motion import InteractionPair, MotionLayout, MotionSequence
from src.data.synthetic import synth_dataset
from src.metrics.fidelity import mpjpe
from src.motion.normalization import denormalize_array
from src.motion.skeleton import load_skeleton
from src.physics.penetration import contact_ratio, evaluate_physics

# Thresholds checked by each run
RECON_REDUCTION = 10.0
OVERFIT_MPJPE_M = 0.05
SEPARATION_FRACTION = 0.5

OVERFIT = {
    "dataset": {"count": 8, "frame_min": 16, "frame_max": 16, "seed": 11},
    "dhvae": {
        "latent_dim": 32, "hidden_dim": 64, "heads": 4, "dropout": 0.0,
        "enc_layers_individual": 2, "cotransformer_layers": 1, "dec_layers": 2,
        "kl_weight": 0.0001, "triplet_weight": 0.0, "max_frames": 16,
    },
    "training": {"vae_epochs": 600, "batch_size": 8, "learning_rate": 0.001},
}

CONTRASTIVE = {
    "dataset": {"count": 64, "frame_min": 16, "frame_max": 16, "seed": 3},
    "dhvae": {
        "latent_dim": 32, "hidden_dim": 64, "heads": 4, "dropout": 0.0,
        "enc_layers_individual": 2, "cotransformer_layers": 2, "dec_layers": 2,
        "triplet_weight": 1.0, "max_frames": 16,
    },
    "training": {"vae_epochs": 60, "batch_size": 16, "learning_rate": 0.0005},
}

END_TO_END = {
    "dataset": {"count": 128, "frame_min": 24, "frame_max": 24},
    "dhvae": {"hidden_dim": 128, "latent_dim": 32, "max_frames": 32},
    "denoiser": {"layers": 7, "hidden_dim": 128, "text_dim": 32},
    "training": {"vae_epochs": 40, "denoiser_epochs": 150, "batch_size": 16, "learning_rate": 0.0005},
    "evaluation": {"r_precision_pool": 16, "diversity_subset": 8},
}

TOUCH_TEXT = "two people reach out and touch hands"
CIRCLE_TEXT = "two people circle around each other"


def _config(overrides):
    return load_run_config("toy", overrides={k: dict(v) for k, v in overrides.items()})


@torch.no_grad()
def _reconstruct(model, pairs, stats):
    x_a, x_b = stack_pairs(pairs, stats)
    output = model(x_a, x_b, sample=False)
    out = []
    for i, pair in enumerate(pairs):
        people = [
            MotionSequence(layout=pair.layout, data=denormalize_array(r[i].double().numpy(), stats))
            for r in (output.recon_a, output.recon_b)
        ]
        out.append(InteractionPair(people[0], people[1], pair.text, pair.contact_annotated))
    return out


@pytest.mark.slow
def test_dhvae_overfits_small_set():
    """Eight clips: reconstruction loss drops tenfold and joints land within 5 cm."""
    config = _config(OVERFIT)
    skeleton = load_skeleton(config.dataset.skeleton)
    pairs = synth_dataset(config.dataset.seed, 8, skeleton, MotionLayout(config.dataset.layout), (16, 16))

    result = train_vae(pairs, config, skeleton)
    recon = [a + b for a, b in zip(result.history.series("recon_a"), result.history.series("recon_b"))]
    reduction = recon[0] / recon[-1]
    error = mpjpe(pairs, _reconstruct(result.model, pairs, result.stats), skeleton)
    print(f"  reconstruction {recon[0]:.4f} -> {recon[-1]:.4f} ({reduction:.1f}x), MPJPE {error:.4f} m")

    assert reduction >= RECON_REDUCTION
    assert error < OVERFIT_MPJPE_M


@pytest.mark.slow
def test_contrastive_training_separates_shifts():
    """On held-out clips, jittered positives sit closer to the anchor than shifted negatives."""
    config = _config(CONTRASTIVE)
    skeleton = load_skeleton(config.dataset.skeleton)
    layout = MotionLayout(config.dataset.layout)
    pairs = synth_dataset(config.dataset.seed, config.dataset.count, skeleton, layout, (16, 16))
    result = train_vae(pairs, config, skeleton)

    held_out = synth_dataset(config.dataset.seed + 1000, 32, skeleton, layout, (16, 16))
    contact = [is_contact(p, skeleton) for p in held_out]
    result.model.eval()
    with torch.no_grad():
        _, diagnostics = contrastive_step(
            held_out, result.model, np.random.default_rng(0), config.contrastive, result.stats, contact
        )
    gap = diagnostics["d_neg"] - diagnostics["d_pos"]
    print(f"  held-out d+ {diagnostics['d_pos']:.3f}, d- {diagnostics['d_neg']:.3f}")

    assert diagnostics["d_pos"] < diagnostics["d_neg"]
    assert gap >= SEPARATION_FRACTION * config.contrastive.margin


def run_end_to_end(root: Path):
    """synth -> train-vae -> train-denoiser -> sample -> eval; returns the sampled pairs per family."""
    root = Path(root)
    commands.cmd_synth(_config(END_TO_END), root / "train.duet")
    commands.cmd_train_vae(_config(END_TO_END), root / "train.duet", root / "vae.ckpt")
    commands.cmd_train_denoiser(_config(END_TO_END), root / "train.duet", root / "vae.ckpt", root / "denoiser.ckpt")

    sampled = {}
    for name, text in (("touch", TOUCH_TEXT), ("circle", CIRCLE_TEXT)):
        sampled[name] = commands.cmd_sample(
            root / "vae.ckpt", root / "denoiser.ckpt", [text], root / f"{name}.duet", count=16, seed=1,
        )
    report = commands.cmd_eval(
        _config(END_TO_END), root / "train.duet", root / "eval.json", generated_path=root / "touch.duet"
    )
    return sampled, report


@pytest.mark.slow
def test_end_to_end_contact_ordering(tmp_path):
    """Clips asked to touch make valid contact more often, and penetrate less, than clips asked to circle."""
    sampled, report = run_end_to_end(tmp_path)
    skeleton = load_skeleton("toy8")
    ratios = {
        name: contact_ratio([replace(p, contact_annotated=True) for p in pairs], skeleton)
        for name, pairs in sampled.items()
    }
    pv = {name: evaluate_physics(pairs, skeleton).pv for name, pairs in sampled.items()}
    print(f"  contact ratio {ratios}, PV {pv}")

    assert {"fidelity", "physics"} <= set(report)
    assert ratios["touch"] > ratios["circle"]
    assert pv["touch"] < pv["circle"]


def main():
    """Run every validation and print the measured values."""
    print("=" * 60)
    print("PIPELINE VALIDATION")
    print("=" * 60)
    print("\nDHVAE overfit:")
    test_dhvae_overfits_small_set()
    print("\nContrastive separation:")
    test_contrastive_training_separates_shifts()
    print("\nEnd to end:")
    with tempfile.TemporaryDirectory() as root:
        test_end_to_end_contact_ordering(Path(root))
    print("\n✓ All pipeline validations passed")


if __name__ == "__main__":
    main()
