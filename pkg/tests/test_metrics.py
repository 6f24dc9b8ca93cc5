"""
Test feature-space generation metrics, reconstruction errors and latent statistics.
"""

import json
from itertools import combinations

import numpy as np
import pytest
import torch

from src.contrastive.triplet import translate_ground
from src.core.config import DHVAEConfig, EvalConfig
from src.core.errors import InsufficientSamples, ShapeMismatch, SingularCovariance
from src.core.motion import InteractionPair, MotionLayout
from src.data.synthetic import synth_dataset
from src.dhvae.model import DHVAE
from src.metrics.features import LatentFeatureExtractor, RandomProjectionExtractor, resample_frames
from src.metrics.fidelity import (
    diversity,
    evaluate_generation,
    feature_l1,
    fid,
    frechet_distance,
    mm_dist,
    mpjpe,
    multimodality,
    r_precision,
    text_class,
)
from src.metrics.latent_stats import latent_statistics
from src.motion.normalization import fit_feature_stats
from src.motion.skeleton import load_skeleton


def test_fid_identities():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((500, 6))
    y = rng.standard_normal((400, 6)) * 2.0 + 1.0
    assert fid(x, x) < 1e-8
    assert fid(x, y) == pytest.approx(fid(y, x), rel=1e-9)
    assert fid(x, y) > 0

    mu = np.array([1.0, -2.0, 0.5])
    assert frechet_distance(np.zeros(3), np.eye(3), mu, np.eye(3)) == pytest.approx(5.25, abs=1e-9)


def test_fid_sampled_against_closed_form():
    """10^4 draws of two known Gaussians land within 5% of the analytic distance."""
    rng = np.random.default_rng(1)
    mu = np.array([1.0, 1.0, 0.0, 0.0])
    scales = np.array([2.0, 1.0, 1.0, 1.0])
    x = rng.standard_normal((10000, 4))
    y = rng.standard_normal((10000, 4)) * scales + mu
    analytic = float(mu @ mu + np.sum(1.0 + scales ** 2 - 2.0 * scales))
    assert analytic == pytest.approx(3.0)
    assert fid(x, y) == pytest.approx(analytic, rel=0.05)


def test_fid_errors():
    with pytest.raises(InsufficientSamples):
        fid(np.zeros((1, 3)), np.zeros((5, 3)))
    with pytest.raises(ShapeMismatch):
        frechet_distance(np.zeros(3), np.eye(3), np.zeros(2), np.eye(2))
    with pytest.raises(SingularCovariance):
        frechet_distance(np.zeros(2), np.diag([1.0, -1.0]), np.zeros(2), np.eye(2))


def test_diversity_cases():
    rng = np.random.default_rng(2)
    assert diversity(np.ones((10, 3)), 5, rng) == 0.0

    two_points = np.array([[0.0, 0.0], [1.0, 0.0]])
    for seed in range(5):
        assert diversity(two_points, 1, np.random.default_rng(seed)) == 1.0

    features = rng.standard_normal((40, 5))
    assert diversity(features, 10, np.random.default_rng(7)) == diversity(features, 10, np.random.default_rng(7))

    with pytest.raises(InsufficientSamples):
        diversity(features, 21, rng)
    with pytest.raises(InsufficientSamples):
        diversity(features, 0, rng)


def test_diversity_matches_enumeration():
    """Average over many subset draws equals the mean squared distance over all pairs."""
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])
    exact = np.mean([np.sum((points[i] - points[j]) ** 2) for i, j in combinations(range(4), 2)])
    rng = np.random.default_rng(3)
    draws = [diversity(points, 2, rng) for _ in range(4000)]
    assert np.mean(draws) == pytest.approx(exact, rel=0.05)


def test_multimodality_cases():
    constant = np.repeat(np.array([[1.0, 2.0], [5.0, -1.0]]), 4, axis=0)
    labels = ["a"] * 4 + ["b"] * 4
    assert multimodality(constant, labels, 2, np.random.default_rng(0)) == 0.0

    features = np.random.default_rng(4).standard_normal((12, 3))
    single = multimodality(features, ["x"] * 12, 3, np.random.default_rng(5))
    assert single == diversity(features, 3, np.random.default_rng(5))

    two_class = np.array([[0.0], [1.0], [0.0], [2.0]])
    assert multimodality(two_class, ["a", "a", "b", "b"], 1, np.random.default_rng(6)) == pytest.approx(2.5)

    with pytest.raises(ShapeMismatch):
        multimodality(two_class, ["a", "b"], 1, np.random.default_rng(0))
    with pytest.raises(InsufficientSamples):
        multimodality(two_class, ["a", "a", "a", "b"], 1, np.random.default_rng(0))


def test_mm_dist_cases():
    x = np.random.default_rng(7).standard_normal((30, 8))
    assert mm_dist(x, x) == 0.0
    assert mm_dist(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == pytest.approx(5.0)

    y = np.random.default_rng(8).standard_normal((30, 8))
    total = 0.0
    for i in range(30):
        total += sum((x[i, k] - y[i, k]) ** 2 for k in range(8))
    assert abs(mm_dist(x, y) - (total / 30) ** 0.5) < 1e-10

    with pytest.raises(ShapeMismatch):
        mm_dist(x, y[:10])
    with pytest.raises(InsufficientSamples):
        mm_dist(np.zeros((0, 3)), np.zeros((0, 3)))


def test_metrics_invariant_under_orthogonal_transform():
    rng = np.random.default_rng(9)
    text = rng.standard_normal((20, 4))
    motion = rng.standard_normal((20, 4))
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    assert mm_dist(text @ q, motion @ q) == pytest.approx(mm_dist(text, motion), rel=1e-12)
    assert diversity(motion @ q, 5, np.random.default_rng(1)) == pytest.approx(
        diversity(motion, 5, np.random.default_rng(1)), rel=1e-12
    )


def test_r_precision_cases():
    features = np.random.default_rng(10).standard_normal((40, 6))
    assert r_precision(features, features, pool_size=32) == [1.0, 1.0, 1.0]

    tied = np.zeros((2, 3))
    assert r_precision(tied, tied, pool_size=2, top_k=2) == [0.5, 1.0]

    with pytest.raises(InsufficientSamples):
        r_precision(features[:10], features[:10], pool_size=32)
    with pytest.raises(ShapeMismatch):
        r_precision(features, features[:, :3])


def test_r_precision_random_features():
    """Independent features: top-1 close to 1/32, monotone in K."""
    rng = np.random.default_rng(11)
    n = 2000
    text = rng.standard_normal((n, 8))
    motion = rng.standard_normal((n, 8))
    scores = r_precision(text, motion, pool_size=32, rng=np.random.default_rng(12))
    p = 1 / 32
    assert abs(scores[0] - p) < 3 * np.sqrt(p * (1 - p) / n)
    assert scores[0] <= scores[1] <= scores[2] <= 1.0


def test_latent_statistics():
    rng = np.random.default_rng(13)
    z_o = rng.standard_normal((5000, 1, 4))
    z_a = rng.standard_normal((5000, 1, 4))
    stats = latent_statistics({"o": z_o, "a": z_a, "b": z_a})

    assert stats.samples == 5000
    for name in ("o", "a"):
        assert np.all(np.abs(stats.channel_variance[name] - 1.0) < 0.1)
        assert stats.kl_to_prior[name] < 0.01
    assert stats.cross_covariance_norm["a_b"] == stats.cross_covariance_norm["a_a"]
    assert stats.cross_covariance_norm["a_o"] < 0.1 * stats.cross_covariance_norm["a_a"]

    again = latent_statistics({"o": z_o, "a": z_a, "b": z_a})
    assert again.to_dict() == stats.to_dict()
    data = stats.to_dict()
    assert set(data) == {
        "samples", "mean_channel_variance", "channel_variance",
        "variance_spread", "cross_covariance_norm", "kl_to_prior",
    }
    json.dumps(data)

    with pytest.raises(InsufficientSamples):
        latent_statistics({"o": z_o[:1]})
    with pytest.raises(ShapeMismatch):
        latent_statistics({"o": z_o, "a": z_a[:10]})


def test_random_projection_extractor():
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(1, 12, skeleton, MotionLayout.IH262, (8, 14))
    extractor = RandomProjectionExtractor(feature_dim=16, frames=10, seed=3)
    first = extractor.motion_features(pairs)
    second = RandomProjectionExtractor(feature_dim=16, frames=10, seed=3).motion_features(pairs)
    assert first.shape == (12, 16)
    assert np.array_equal(first, second)
    assert extractor.text_features([p.text for p in pairs]).shape == (12, 16)
    assert extractor.describe()["aligned"] is False

    text = extractor.text_features([p.text for p in pairs])
    before = mm_dist(text, first)
    extractor.fit_alignment(pairs)
    after = mm_dist(text, extractor.motion_features(pairs))
    assert after < before
    assert extractor.describe()["aligned"] is True


def test_resample_frames():
    ramp = np.linspace(0.0, 1.0, 5)[:, None] * np.array([[1.0, 2.0]])
    assert np.array_equal(resample_frames(ramp, 5), ramp)
    assert np.allclose(resample_frames(ramp, 9)[:, 0], np.linspace(0.0, 1.0, 9))
    assert np.array_equal(resample_frames(ramp[:1], 4), np.repeat(ramp[:1], 4, axis=0))


def test_latent_feature_extractor():
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(2, 3, skeleton, MotionLayout.IH262, (8, 8))
    stats = fit_feature_stats(pairs)
    torch.manual_seed(0)
    config = DHVAEConfig(
        feature_dim=stats.dim, latent_dim=8, hidden_dim=16, heads=4, dropout=0.0,
        enc_layers_individual=1, cotransformer_layers=1, dec_layers=1, max_frames=16,
    )
    extractor = LatentFeatureExtractor(DHVAE(config).eval(), stats, seed=1)
    features = extractor.motion_features(pairs)
    assert features.shape == (3, extractor.dim)
    assert extractor.dim == 3 * config.latent_tokens * 8
    assert np.array_equal(features, extractor.motion_features(pairs))
    assert extractor.text_features(["two people wave"]).shape == (1, extractor.dim)


def test_reconstruction_errors():
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(3, 4, skeleton, MotionLayout.IH262, (8, 8))
    stats = fit_feature_stats(pairs)
    assert mpjpe(pairs, pairs, skeleton) == 0.0
    assert feature_l1(pairs, pairs, stats) == 0.0

    shifted = [
        InteractionPair(
            person_a=p.person_a,
            person_b=translate_ground(p.person_b, (1.0, 0.0)),
            text=p.text,
            contact_annotated=p.contact_annotated,
        )
        for p in pairs
    ]
    assert mpjpe(pairs, shifted, skeleton) == pytest.approx(0.5)
    assert feature_l1(pairs, shifted, stats) > 0

    with pytest.raises(ShapeMismatch):
        mpjpe(pairs, pairs[:2], skeleton)
    with pytest.raises(ShapeMismatch):
        feature_l1([], [], stats)


def test_evaluate_generation(tmp_path):
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(6, 40, skeleton, MotionLayout.IH262, (8, 8))
    cfg = EvalConfig(feature_dim=8, feature_frames=8, diversity_subset=4, multimodality_subset=2,
                     r_precision_pool=8)
    extractor = RandomProjectionExtractor(cfg.feature_dim, cfg.feature_frames, seed=cfg.seed)
    extractor.fit_alignment(pairs)

    report = evaluate_generation(pairs, pairs, extractor, cfg)
    assert report.fid < 1e-6
    assert report.diversity > 0 and report.reference_diversity > 0
    assert report.multimodality > 0
    assert report.mm_dist > 0
    assert len(report.r_precision) == 3
    assert report.r_precision == sorted(report.r_precision)
    assert report.counts == {"generated": 40, "reference": 40}
    assert evaluate_generation(pairs, pairs, extractor, cfg).to_dict() == report.to_dict()

    path = tmp_path / "eval.json"
    report.save(path)
    assert json.loads(path.read_text())["extractor"]["aligned"] is True

    tiny = evaluate_generation(pairs[:1], pairs, extractor, cfg)
    assert tiny.fid is None and tiny.diversity is None
    assert tiny.r_precision is None and tiny.multimodality is None
    assert tiny.mm_dist is not None


def test_text_class():
    assert text_class("two people reach out and touch hands") == "reach-and-touch"
    assert text_class("a person juggles") == "a person juggles"


def main():
    """Run all tests."""
    print("=" * 60)
    print("GENERATION METRIC TESTS")
    print("=" * 60)
    test_fid_identities()
    test_fid_sampled_against_closed_form()
    test_fid_errors()
    test_diversity_cases()
    test_diversity_matches_enumeration()
    test_multimodality_cases()
    test_mm_dist_cases()
    test_metrics_invariant_under_orthogonal_transform()
    test_r_precision_cases()
    test_r_precision_random_features()
    test_latent_statistics()
    test_random_projection_extractor()
    test_resample_frames()
    test_latent_feature_extractor()
    test_reconstruction_errors()
    test_text_class()
    print("✓ All generation metric tests passed")


if __name__ == "__main__":
    main()
