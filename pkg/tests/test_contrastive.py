"""
Test contact decisions, ground-plane shifts, shift sampling and the triplet loss.
"""

import numpy as np
import pytest
import torch
import torch.nn as nn
from scipy.stats import chisquare, truncnorm

from src.contrastive.triplet import (
    TripletLoss,
    build_triplets,
    contrastive_step,
    is_contact,
    sample_negative_delta,
    sample_positive_delta,
    translate_ground,
    triplet_loss,
)
from src.core.config import ContrastiveConfig
from src.core.errors import ShapeMismatch
from src.core.motion import InteractionPair, MotionLayout
from src.data.synthetic import family_of_text, synth_dataset
from src.motion.kinematics import joint_positions
from src.motion.normalization import fit_feature_stats, znorm
from src.motion.skeleton import load_skeleton


class ConstantEncoder(nn.Module):
    """Maps every interaction to the same latent."""

    def __init__(self):
        super().__init__()
        self.anchor = nn.Parameter(torch.zeros(1, 3, 4))

    def encode_interaction(self, x_a, x_b):
        return self.anchor.expand(x_a.shape[0], -1, -1)


class MeanEncoder(nn.Module):
    """Latent = mean features of person b, so ground shifts move it."""

    def __init__(self):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(()))

    def encode_interaction(self, x_a, x_b):
        return self.scale * x_b.mean(dim=1)


def family_pairs(family, layout, count=8, seed=5):
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(seed, count, skeleton, layout, (12, 12))
    return skeleton, [p for p in pairs if family_of_text(p.text) == family]


def test_triplet_loss_cases():
    """Hinge on hand-placed distances."""
    cases = [
        # (d_pos, d_neg, margin, expected)
        (0.3, 0.9, 0.2, 0.0),
        (0.9, 0.3, 0.2, 0.8),
        (0.5, 0.5, 0.2, 0.2),
        (0.0, 0.0, 1.0, 1.0),
    ]
    for d_pos, d_neg, margin, expected in cases:
        anchor = torch.zeros(1, 2, dtype=torch.float64)
        positive = torch.tensor([[d_pos, 0.0]], dtype=torch.float64)
        negative = torch.tensor([[0.0, d_neg]], dtype=torch.float64)
        loss = triplet_loss(anchor, positive, negative, margin)
        assert loss.item() == pytest.approx(expected, abs=1e-12)
        assert TripletLoss(margin)(anchor, positive, negative).item() == pytest.approx(expected, abs=1e-12)

    with pytest.raises(ShapeMismatch):
        triplet_loss(torch.zeros(2, 3), torch.zeros(2, 3), torch.zeros(2, 4), 1.0)
    with pytest.raises(ValueError):
        TripletLoss(0.0)
    assert TripletLoss.from_config(ContrastiveConfig(margin=0.7)).margin == 0.7


def test_triplet_loss_flattens_token_latents():
    """Distances run over every token and channel."""
    anchor = torch.zeros(1, 3, 2)
    positive = torch.zeros(1, 3, 2)
    positive[0, 0, 0] = 3.0
    positive[0, 2, 1] = 4.0
    negative = torch.zeros(1, 3, 2)
    loss = triplet_loss(anchor, positive, negative, 0.5)
    assert loss.item() == pytest.approx(5.5)


def test_positive_delta_bounds_and_spread():
    """Truncated at 3 sigma; empirical spread matches the truncated normal."""
    cfg = ContrastiveConfig()
    rng = np.random.default_rng(0)
    for contact, sigma in ((True, cfg.sigma_c), (False, cfg.sigma_u)):
        draws = np.array([sample_positive_delta(rng, contact, cfg) for _ in range(10000)])
        assert draws.shape == (10000, 2)
        assert np.abs(draws).max() <= 3 * sigma + 1e-12
        expected = truncnorm.std(-3, 3, scale=sigma)
        assert abs(draws.std() - expected) / expected < 0.05
        assert abs(draws.mean()) < 0.05 * sigma


def test_positive_delta_vanishes_with_sigma():
    cfg = ContrastiveConfig(sigma_c=1e-9)
    rng = np.random.default_rng(1)
    delta = sample_positive_delta(rng, True, cfg)
    assert np.abs(delta).max() <= 3e-9


def test_negative_delta_band_and_direction():
    """Lengths stay in [1.5, 3] sigma_u and directions are uniform over sectors."""
    cfg = ContrastiveConfig()
    rng = np.random.default_rng(2)
    draws = np.array([sample_negative_delta(rng, cfg) for _ in range(10000)])
    lengths = np.linalg.norm(draws, axis=-1)
    assert lengths.min() >= cfg.neg_low_mult * cfg.sigma_u - 1e-12
    assert lengths.max() <= cfg.neg_high_mult * cfg.sigma_u + 1e-12

    angles = np.mod(np.arctan2(draws[:, 1], draws[:, 0]), 2 * np.pi)
    sectors = np.bincount((angles // (np.pi / 4)).astype(int), minlength=8)[:8]
    assert chisquare(sectors).pvalue > 0.01


def test_translate_ground_ih():
    """Zero is identity, d then -d restores, positions shift rigidly."""
    skeleton = load_skeleton("toy8")
    pair = synth_dataset(3, 1, skeleton, MotionLayout.IH262, (10, 10))[0]
    seq = pair.person_b

    same = translate_ground(seq, (0.0, 0.0))
    assert np.allclose(same.data, seq.data, atol=1e-12)

    delta = np.array([0.4, -0.25])
    moved = translate_ground(seq, delta)
    back = translate_ground(moved, -delta)
    assert np.allclose(back.data, seq.data, atol=1e-6)

    shift = joint_positions(moved, skeleton) - joint_positions(seq, skeleton)
    assert np.allclose(shift[..., 0], delta[0], atol=1e-6)
    assert np.allclose(shift[..., 1], 0.0, atol=1e-6)
    assert np.allclose(shift[..., 2], delta[1], atol=1e-6)

    positions = slice(0, seq.joint_count * 3)
    others = np.ones(seq.dim, dtype=bool)
    others[positions] = False
    assert np.array_equal(moved.data[:, others], np.asarray(seq.data, dtype=np.float64)[:, others])


def test_translate_ground_ix():
    """Only the root translation moves; every joint follows through FK."""
    skeleton = load_skeleton("toy8")
    pair = synth_dataset(3, 1, skeleton, MotionLayout.IX56x6, (10, 10))[0]
    seq = pair.person_a
    moved = translate_ground(seq, (-0.3, 0.6))

    shift = joint_positions(moved, skeleton) - joint_positions(seq, skeleton)
    assert np.allclose(shift[..., 0], -0.3, atol=1e-5)
    assert np.allclose(shift[..., 2], 0.6, atol=1e-5)
    assert np.array_equal(moved.data[:, 3:], np.asarray(seq.data, dtype=np.float64)[:, 3:])


def test_translate_ground_rejects_normalized():
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(3, 4, skeleton, MotionLayout.IH262, (10, 10))
    stats = fit_feature_stats(pairs)
    with pytest.raises(ValueError):
        translate_ground(znorm(pairs[0].person_a, stats), (0.1, 0.1))


def test_is_contact_decisions():
    """Touching hands count; the same clip pulled apart does not."""
    for layout in (MotionLayout.IH262, MotionLayout.IX56x6):
        skeleton, pairs = family_pairs("reach-and-touch", layout)
        assert pairs
        for pair in pairs:
            assert is_contact(pair, skeleton)

            apart = InteractionPair(
                person_a=pair.person_a,
                person_b=translate_ground(pair.person_b, (5.0, 0.0)),
                text=pair.text,
                contact_annotated=pair.contact_annotated,
            )
            assert not is_contact(apart, skeleton)

            together = InteractionPair(
                person_a=translate_ground(pair.person_a, (1.3, -0.7)),
                person_b=translate_ground(pair.person_b, (1.3, -0.7)),
                text=pair.text,
                contact_annotated=pair.contact_annotated,
            )
            assert is_contact(together, skeleton)


def test_is_contact_single_frame():
    """One touching frame is enough."""
    skeleton, pairs = family_pairs("reach-and-touch", MotionLayout.IH262)
    pair = pairs[0]
    wrist_a = joint_positions(pair.person_a, skeleton)[:, skeleton.roles["left_wrist"]]
    wrist_b = joint_positions(pair.person_b, skeleton)[:, skeleton.roles["right_wrist"]]
    closest = int(np.argmin(np.linalg.norm(wrist_a - wrist_b, axis=-1)))

    far = translate_ground(pair.person_b, (5.0, 0.0))
    data = np.array(far.data)
    data[closest] = pair.person_b.data[closest]
    single = InteractionPair(
        person_a=pair.person_a, person_b=far.with_data(data), text=pair.text, contact_annotated=True
    )
    assert is_contact(single, skeleton)


def test_build_triplets_shapes_and_errors():
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(4, 4, skeleton, MotionLayout.IH262, (10, 10))
    cfg = ContrastiveConfig()
    contact = [p.contact_annotated for p in pairs]
    batch = build_triplets(pairs, np.random.default_rng(0), cfg, contact=contact)
    assert batch.x_a.shape == (4, 10, pairs[0].person_a.dim)
    assert batch.x_b_pos.shape == batch.x_b.shape == batch.x_b_neg.shape
    assert batch.delta_pos.shape == batch.delta_neg.shape == (4, 2)
    assert batch.contact == contact
    for flag, delta in zip(batch.contact, batch.delta_pos):
        sigma = cfg.sigma_c if flag else cfg.sigma_u
        assert np.abs(delta).max() <= 3 * sigma + 1e-12

    with pytest.raises(ValueError):
        build_triplets([], np.random.default_rng(0), cfg, contact=[])
    with pytest.raises(ValueError):
        build_triplets(pairs, np.random.default_rng(0), cfg)
    with pytest.raises(ShapeMismatch):
        build_triplets(pairs, np.random.default_rng(0), cfg, contact=contact[:2])

    mixed = pairs[:1] + synth_dataset(4, 1, skeleton, MotionLayout.IH262, (12, 12))
    with pytest.raises(ShapeMismatch):
        build_triplets(mixed, np.random.default_rng(0), cfg, contact=[True, False])


def test_contrastive_step():
    """Constant encoder gives the margin; a fixed seed repeats the loss."""
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(6, 4, skeleton, MotionLayout.IH262, (10, 10))
    cfg = ContrastiveConfig(margin=0.8)
    contact = [p.contact_annotated for p in pairs]

    loss, diagnostics = contrastive_step(pairs, ConstantEncoder(), np.random.default_rng(0), cfg, contact=contact)
    assert loss.item() == pytest.approx(0.8)
    assert diagnostics["d_pos"] == 0.0 and diagnostics["d_neg"] == 0.0
    assert diagnostics["contact_fraction"] == pytest.approx(0.5)

    stats = fit_feature_stats(pairs)
    encoder = MeanEncoder()
    first, _ = contrastive_step(pairs, encoder, np.random.default_rng(7), cfg, stats, contact)
    second, _ = contrastive_step(pairs, encoder, np.random.default_rng(7), cfg, stats, contact)
    assert first.item() == second.item()

    first.backward()
    assert encoder.scale.grad is not None


def main():
    """Run all tests."""
    print("=" * 60)
    print("CONTRASTIVE TESTS")
    print("=" * 60)
    test_triplet_loss_cases()
    test_triplet_loss_flattens_token_latents()
    test_positive_delta_bounds_and_spread()
    test_positive_delta_vanishes_with_sigma()
    test_negative_delta_band_and_direction()
    test_translate_ground_ih()
    test_translate_ground_ix()
    test_translate_ground_rejects_normalized()
    test_is_contact_decisions()
    test_is_contact_single_frame()
    test_build_triplets_shapes_and_errors()
    test_contrastive_step()
    print("✓ All contrastive tests passed")


if __name__ == "__main__":
    main()
