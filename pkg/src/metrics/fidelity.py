"""
Feature-space generation metrics and reconstruction errors.

    FID          ||mu_g - mu_r||^2 + Tr(S_g + S_r - 2 (S_g S_r)^(1/2))
    Diversity    mean ||f_i - f'_i||^2 over two disjoint random subsets of size S_d
    Multimodality  Diversity within each text class (subset S_l), averaged over classes
    MM-Dist      sqrt(mean ||f_text,i - f_motion,i||^2)
    R-Precision  top-K hit rate of the true text among itself and pool - 1 mismatches

Diversity and multimodality use squared distances.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from src.core.config import EvalConfig
from src.core.errors import InsufficientSamples, ShapeMismatch, SingularCovariance
from src.core.motion import InteractionPair, SkeletonSpec
from src.data.synthetic import family_of_text
from src.metrics.features import FeatureExtractor
from src.motion.kinematics import joint_positions
from src.motion.normalization import FeatureStats, normalize_array

logger = logging.getLogger(__name__)

COVARIANCE_EPS = 1e-6
NEGATIVE_EIGEN_TOL = 1e-8


def feature_statistics(features: np.ndarray):
    """(mean, covariance) of (n, k) features, n >= 2."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise InsufficientSamples(f"Need at least 2 feature rows, got shape {features.shape}")
    return features.mean(axis=0), np.cov(features, rowvar=False).reshape(features.shape[1], -1)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh(matrix)
    if values.min() < -NEGATIVE_EIGEN_TOL * max(1.0, abs(values.max())):
        raise SingularCovariance(f"Covariance has negative eigenvalue {values.min():.3e}")
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_distance(mu1: np.ndarray, sigma1: np.ndarray, mu2: np.ndarray, sigma2: np.ndarray) -> float:
    """
    Squared Frechet distance between N(mu1, sigma1) and N(mu2, sigma2).

    Both covariances get 1e-6 * I; Tr((S1 S2)^(1/2)) is taken from the
    eigenvalues of the symmetric S1^(1/2) S2 S1^(1/2).

    Raises:
        SingularCovariance: If a spectrum is clearly negative
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    sigma1, sigma2 = np.atleast_2d(sigma1).astype(np.float64), np.atleast_2d(sigma2).astype(np.float64)
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape or sigma1.shape != (mu1.size, mu1.size):
        raise ShapeMismatch(
            f"Inconsistent moments: mu {mu1.shape}/{mu2.shape}, sigma {sigma1.shape}/{sigma2.shape}"
        )
    eye = np.eye(mu1.size)
    sigma1 = sigma1 + COVARIANCE_EPS * eye
    sigma2 = sigma2 + COVARIANCE_EPS * eye

    root1 = _psd_sqrt(sigma1)
    product = root1 @ sigma2 @ root1
    values = linalg.eigvalsh(0.5 * (product + product.T))
    if values.min() < -NEGATIVE_EIGEN_TOL * max(1.0, abs(values.max())):
        raise SingularCovariance(f"Covariance product has negative eigenvalue {values.min():.3e}")
    trace_root = float(np.sqrt(np.clip(values, 0.0, None)).sum())

    diff = mu1 - mu2
    distance = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * trace_root)
    return max(distance, 0.0)


def fid(features_gen: np.ndarray, features_ref: np.ndarray) -> float:
    """
    FID between two feature sets.

    Examples:
        >>> x = np.random.default_rng(0).standard_normal((200, 4))
        >>> fid(x, x) < 1e-8
        True
    """
    mu_g, sigma_g = feature_statistics(features_gen)
    mu_r, sigma_r = feature_statistics(features_ref)
    return frechet_distance(mu_g, sigma_g, mu_r, sigma_r)


def diversity(features: np.ndarray, subset_size: int, rng: np.random.Generator) -> float:
    """
    Mean squared distance between two disjoint random subsets of size subset_size.

    Raises:
        InsufficientSamples: If 2 * subset_size exceeds the sample count
    """
    features = np.asarray(features, dtype=np.float64)
    if subset_size < 1 or 2 * subset_size > features.shape[0]:
        raise InsufficientSamples(
            f"Diversity needs 2 * {subset_size} samples, got {features.shape[0]}"
        )
    order = rng.permutation(features.shape[0])
    first = features[order[:subset_size]]
    second = features[order[subset_size: 2 * subset_size]]
    return float(np.mean(np.sum((first - second) ** 2, axis=-1)))


def multimodality(
    features: np.ndarray, labels: Sequence, subset_size: int, rng: np.random.Generator
) -> float:
    """
    Diversity within each label class, averaged over classes (sorted label order).

    Raises:
        InsufficientSamples: If any class has fewer than 2 * subset_size samples
    """
    features = np.asarray(features, dtype=np.float64)
    labels = list(labels)
    if len(labels) != features.shape[0]:
        raise ShapeMismatch(f"{len(labels)} labels for {features.shape[0]} feature rows")
    classes = sorted(set(labels), key=str)
    if not classes:
        raise InsufficientSamples("Multimodality needs at least one class")
    scores = []
    for label in classes:
        members = features[[i for i, lab in enumerate(labels) if lab == label]]
        if 2 * subset_size > members.shape[0]:
            raise InsufficientSamples(
                f"Class {label!r} has {members.shape[0]} samples, needs {2 * subset_size}"
            )
        scores.append(diversity(members, subset_size, rng))
    return float(np.mean(scores))


def mm_dist(text_features: np.ndarray, motion_features: np.ndarray) -> float:
    """
    Root mean squared distance between paired text and motion features.

    Raises:
        ShapeMismatch: If the two sets are not paired row for row
    """
    text_features = np.asarray(text_features, dtype=np.float64)
    motion_features = np.asarray(motion_features, dtype=np.float64)
    if text_features.shape != motion_features.shape:
        raise ShapeMismatch(
            f"Text {text_features.shape} and motion {motion_features.shape} features are not paired"
        )
    if text_features.shape[0] == 0:
        raise InsufficientSamples("MM-Dist needs at least one pair")
    return float(np.sqrt(np.mean(np.sum((text_features - motion_features) ** 2, axis=-1))))


def r_precision(
    text_features: np.ndarray,
    motion_features: np.ndarray,
    pool_size: int = 32,
    top_k: int = 3,
    rng: Optional[np.random.Generator] = None,
) -> List[float]:
    """
    Top-1..top_k retrieval accuracy of each motion's own text in a pool of
    pool_size candidates (the true text plus pool_size - 1 others).

    Candidates are ranked by Euclidean distance, ties by dataset index.

    Raises:
        InsufficientSamples: If fewer than pool_size pairs are available
    """
    text_features = np.asarray(text_features, dtype=np.float64)
    motion_features = np.asarray(motion_features, dtype=np.float64)
    if text_features.shape != motion_features.shape:
        raise ShapeMismatch(
            f"Text {text_features.shape} and motion {motion_features.shape} features are not paired"
        )
    n = text_features.shape[0]
    if n < pool_size:
        raise InsufficientSamples(f"R-precision pool of {pool_size} needs as many samples, got {n}")
    rng = rng or np.random.default_rng(0)

    hits = np.zeros(top_k)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        candidates = np.concatenate([[i], rng.choice(others, pool_size - 1, replace=False)])
        distances = np.linalg.norm(text_features[candidates] - motion_features[i], axis=-1)
        ranking = candidates[np.lexsort((candidates, distances))]
        rank = int(np.nonzero(ranking == i)[0][0])
        hits[rank:] += 1
    return [float(h / n) for h in hits]


def mpjpe(reference: Sequence[InteractionPair], generated: Sequence[InteractionPair], skeleton: SkeletonSpec) -> float:
    """
    Mean per-joint position error in metres over both persons of matching clips.
    """
    if len(reference) != len(generated) or not reference:
        raise ShapeMismatch(f"Need matching non-empty clip lists, got {len(reference)} and {len(generated)}")
    errors = []
    for ref, gen in zip(reference, generated):
        for a, b in ((ref.person_a, gen.person_a), (ref.person_b, gen.person_b)):
            if a.frames != b.frames:
                raise ShapeMismatch(f"Clip lengths differ: {a.frames} vs {b.frames}")
            diff = joint_positions(a, skeleton) - joint_positions(b, skeleton)
            errors.append(np.linalg.norm(diff, axis=-1).reshape(-1))
    return float(np.mean(np.concatenate(errors)))


def feature_l1(
    reference: Sequence[InteractionPair], generated: Sequence[InteractionPair], stats: FeatureStats
) -> float:
    """Mean absolute difference of z-normalized features over matching clips."""
    if len(reference) != len(generated) or not reference:
        raise ShapeMismatch(f"Need matching non-empty clip lists, got {len(reference)} and {len(generated)}")
    total, count = 0.0, 0
    for ref, gen in zip(reference, generated):
        for a, b in ((ref.person_a, gen.person_a), (ref.person_b, gen.person_b)):
            diff = normalize_array(a.data, stats) - normalize_array(b.data, stats)
            total += float(np.abs(diff).sum())
            count += diff.size
    return total / count


@dataclass
class EvalReport:
    """
    Generation metrics of one sample set against a reference set.

    Attributes:
        fid: Frechet distance of motion features
        diversity: Diversity of generated motion features
        multimodality: Within-text diversity of generated motion
        mm_dist: Text-to-motion distance of generated clips
        r_precision: Top-1, top-2, top-3 accuracy
        counts: Sample counts per set
        seed: Seed of the random subsets
        extractor: Description of the feature extractor
        extras: Optional sections (physics, reconstruction, latent statistics)
    """
    fid: Optional[float]
    diversity: Optional[float]
    multimodality: Optional[float]
    mm_dist: Optional[float]
    r_precision: Optional[List[float]]
    counts: Dict[str, int]
    seed: int
    extractor: Dict
    reference_diversity: Optional[float] = None
    extras: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "fid": self.fid,
            "diversity": self.diversity,
            "reference_diversity": self.reference_diversity,
            "multimodality": self.multimodality,
            "mm_dist": self.mm_dist,
            "r_precision": self.r_precision,
            "counts": self.counts,
            "seed": self.seed,
            "extractor": self.extractor,
            **self.extras,
        }

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))

    def __repr__(self) -> str:
        def fmt(value) -> str:
            return "n/a" if value is None else f"{value:.3f}"

        top = "n/a" if self.r_precision is None else "/".join(f"{v:.3f}" for v in self.r_precision)
        return (
            f"EvalReport(fid={fmt(self.fid)}, diversity={fmt(self.diversity)}, "
            f"mmodality={fmt(self.multimodality)}, mm_dist={fmt(self.mm_dist)}, r_precision={top})"
        )


def _guarded(label: str, fn):
    try:
        return fn()
    except InsufficientSamples as exc:
        logger.warning("%s skipped: %s", label, exc)
        return None


def text_class(text: str) -> str:
    """Multimodality class of a caption: its template family, else the caption itself."""
    return family_of_text(text) or text


def evaluate_generation(
    generated: Sequence[InteractionPair],
    reference: Sequence[InteractionPair],
    extractor: FeatureExtractor,
    cfg: Optional[EvalConfig] = None,
) -> EvalReport:
    """
    All feature-space metrics of generated clips against reference clips.

    Metrics whose sample requirements are not met are reported as None.
    """
    cfg = cfg or EvalConfig()
    gen_features = extractor.motion_features(generated)
    ref_features = extractor.motion_features(reference)
    text_features = extractor.text_features([p.text for p in generated])
    rng = np.random.default_rng(cfg.seed)

    report = EvalReport(
        fid=_guarded("FID", lambda: fid(gen_features, ref_features)),
        diversity=_guarded("Diversity", lambda: diversity(gen_features, cfg.diversity_subset, rng)),
        multimodality=_guarded(
            "Multimodality",
            lambda: multimodality(
                gen_features, [text_class(p.text) for p in generated], cfg.multimodality_subset, rng
            ),
        ),
        mm_dist=_guarded("MM-Dist", lambda: mm_dist(text_features, gen_features)),
        r_precision=_guarded(
            "R-Precision", lambda: r_precision(text_features, gen_features, cfg.r_precision_pool, 3, rng)
        ),
        counts={"generated": len(generated), "reference": len(reference)},
        seed=cfg.seed,
        extractor=extractor.describe(),
        reference_diversity=_guarded(
            "Reference diversity", lambda: diversity(ref_features, cfg.diversity_subset, rng)
        ),
    )
    logger.info("%r", report)
    return report
