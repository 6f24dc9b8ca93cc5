"""
Penetration and contact metrics over generated interaction pairs.

Per frame, both persons are voxelized on the global lattice and their shared
voxels counted. Over a collection of sequences:

    PV  = mean over sequences of the mean per-frame overlap
    PFR = fraction of sequences with any penetrating frame
    PDR = mean over sequences of (penetrating frames / frames)

Contact uses dilated occupancies: a contact-annotated sequence is a valid
contact when its maximum dilated overlap is positive and its maximum undilated
overlap stays within the severe threshold (27 voxels = a 6 cm cube at 2 cm).
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from tqdm import tqdm

from src.core.config import EvalConfig
from src.core.errors import InsufficientSamples
from src.core.motion import InteractionPair, SkeletonSpec
from src.motion.kinematics import joint_positions
from src.physics.voxels import (
    DEFAULT_RESOLUTION,
    INCLUSION_TOL,
    NEIGHBOURHOOD,
    BodyVolume,
    index_range,
    rasterize,
    voxel_overlap,
    voxelize,
)

logger = logging.getLogger(__name__)


@dataclass
class SequenceOverlap:
    """
    Per-frame overlap counts of one sequence.

    Attributes:
        index: Position of the sequence in the evaluated collection
        overlaps: Undilated shared-voxel count per frame
        dilated: Dilated shared-voxel count per frame (empty if not computed)
        contact_annotated: Whether the sequence is expected to touch
        text: Condition text, if any
    """
    index: int
    overlaps: List[int]
    dilated: List[int] = field(default_factory=list)
    contact_annotated: bool = False
    text: str = ""

    @property
    def frames(self) -> int:
        return len(self.overlaps)

    @property
    def mean_overlap(self) -> float:
        return float(np.mean(self.overlaps)) if self.overlaps else 0.0

    @property
    def penetrating_frames(self) -> int:
        return sum(1 for v in self.overlaps if v > 0)

    @property
    def penetrates(self) -> bool:
        return self.penetrating_frames > 0

    @property
    def duration_ratio(self) -> float:
        return self.penetrating_frames / self.frames if self.frames else 0.0

    @property
    def max_overlap(self) -> int:
        return max(self.overlaps, default=0)

    @property
    def max_dilated(self) -> int:
        return max(self.dilated, default=0)

    def is_valid_contact(self, severe_threshold_voxels: int) -> bool:
        return self.max_dilated > 0 and self.max_overlap <= severe_threshold_voxels

    def to_dict(self) -> Dict:
        return {
            "index": self.index,
            "text": self.text,
            "frames": self.frames,
            "contact_annotated": self.contact_annotated,
            "mean_overlap": self.mean_overlap,
            "max_overlap": self.max_overlap,
            "max_dilated_overlap": self.max_dilated,
            "penetrating_frames": self.penetrating_frames,
            "duration_ratio": self.duration_ratio,
        }


@dataclass
class PenetrationReport:
    """
    Aggregate physics metrics of a generated collection.

    Attributes:
        pv: Mean over sequences of the mean per-frame overlap (voxels)
        pv_pooled: Mean over all frames of all sequences (voxels)
        pfr: Fraction of sequences with any penetration
        pdr: Mean per-sequence fraction of penetrating frames
        contact_ratio: Valid contacts / annotated sequences, None if none annotated
        per_sequence: Detail records
        resolution: Voxel pitch in metres
        dilation_voxels: Dilation used for contact detection
        severe_threshold_voxels: Severe-penetration cutoff
    """
    pv: float
    pv_pooled: float
    pfr: float
    pdr: float
    contact_ratio: Optional[float]
    per_sequence: List[SequenceOverlap]
    resolution: float = DEFAULT_RESOLUTION
    dilation_voxels: int = 1
    severe_threshold_voxels: int = 27

    def summary(self) -> Dict:
        return {
            "pv": self.pv,
            "pv_pooled": self.pv_pooled,
            "pfr": self.pfr,
            "pdr": self.pdr,
            "contact_ratio": self.contact_ratio,
            "sequences": len(self.per_sequence),
            "resolution": self.resolution,
            "dilation_voxels": self.dilation_voxels,
            "severe_threshold_voxels": self.severe_threshold_voxels,
        }

    def to_dict(self) -> Dict:
        data = self.summary()
        data["per_sequence"] = [record.to_dict() for record in self.per_sequence]
        return data

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))

    def __repr__(self) -> str:
        contact = "n/a" if self.contact_ratio is None else f"{self.contact_ratio:.3f}"
        return (
            f"PenetrationReport(pv={self.pv:.2f}, pfr={self.pfr:.3f}, "
            f"pdr={self.pdr:.3f}, contact_ratio={contact}, n={len(self.per_sequence)})"
        )


def frame_overlap(
    body_a: BodyVolume,
    body_b: BodyVolume,
    frame: int,
    resolution: float = DEFAULT_RESOLUTION,
    dilation_voxels: int = 0,
) -> Tuple[int, int]:
    """
    Undilated and dilated shared-voxel counts of one frame.

    Both bodies are rasterized on a dense box around the intersection of their
    bounding boxes, grown by the dilation amount, which gives the same counts
    as intersecting the full sparse grids.

    Returns:
        (overlap, dilated_overlap); dilated_overlap == overlap when dilation_voxels is 0
    """
    bounds_a = body_a.bounds(frame)
    bounds_b = body_b.bounds(frame)
    if bounds_a is None or bounds_b is None:
        return 0, 0

    k = max(int(dilation_voxels), 0)
    lo_a, hi_a = index_range(*bounds_a, resolution)
    lo_b, hi_b = index_range(*bounds_b, resolution)
    region_lo = np.maximum(lo_a, lo_b) - k
    region_hi = np.minimum(hi_a, hi_b) + k
    if np.any(region_hi < region_lo):
        return 0, 0

    box_lo = region_lo - k
    shape = tuple(int(v) for v in region_hi + k - box_lo + 1)
    occ_a = rasterize(body_a, frame, box_lo, shape, resolution)
    occ_b = rasterize(body_b, frame, box_lo, shape, resolution)
    overlap = int(np.count_nonzero(occ_a & occ_b))
    if k == 0:
        return overlap, overlap

    grown_a = ndimage.binary_dilation(occ_a, structure=NEIGHBOURHOOD, iterations=k)
    grown_b = ndimage.binary_dilation(occ_b, structure=NEIGHBOURHOOD, iterations=k)
    return overlap, int(np.count_nonzero(grown_a & grown_b))


def pair_bodies(pair: InteractionPair, skeleton: SkeletonSpec) -> Tuple[BodyVolume, BodyVolume]:
    """Capsule bodies of both persons of a denormalized pair."""
    return (
        BodyVolume.from_joints(skeleton, joint_positions(pair.person_a, skeleton)),
        BodyVolume.from_joints(skeleton, joint_positions(pair.person_b, skeleton)),
    )


def sequence_overlaps(
    body_a: BodyVolume,
    body_b: BodyVolume,
    resolution: float = DEFAULT_RESOLUTION,
    dilation_voxels: int = 0,
) -> Tuple[List[int], List[int]]:
    """Per-frame (undilated, dilated) overlap lists of two bodies."""
    if body_a.frames != body_b.frames:
        raise ValueError(f"Bodies differ in length: {body_a.frames} vs {body_b.frames}")
    counts = [
        frame_overlap(body_a, body_b, f, resolution, dilation_voxels) for f in range(body_a.frames)
    ]
    return [c[0] for c in counts], [c[1] for c in counts]


def measure_pairs(
    pairs: Sequence[InteractionPair],
    skeleton: SkeletonSpec,
    resolution: float = DEFAULT_RESOLUTION,
    dilation_voxels: int = 0,
    progress: bool = False,
) -> List[SequenceOverlap]:
    records = []
    for i, pair in enumerate(tqdm(pairs, desc="voxel overlap", disable=not progress)):
        body_a, body_b = pair_bodies(pair, skeleton)
        overlaps, dilated = sequence_overlaps(body_a, body_b, resolution, dilation_voxels)
        records.append(
            SequenceOverlap(
                index=i,
                overlaps=overlaps,
                dilated=dilated if dilation_voxels > 0 else list(overlaps),
                contact_annotated=pair.contact_annotated,
                text=pair.text,
            )
        )
    return records


def penetration_from_overlaps(per_sequence: Sequence[Sequence[int]]) -> Tuple[float, float, float]:
    """
    (PV, PFR, PDR) from per-sequence lists of per-frame overlaps.

    Examples:
        >>> penetration_from_overlaps([[1] * 5 + [0] * 5, [0] * 10])
        (0.25, 0.5, 0.25)
    """
    if not per_sequence:
        raise InsufficientSamples("Penetration metrics need at least one sequence")
    records = [SequenceOverlap(index=i, overlaps=list(o)) for i, o in enumerate(per_sequence)]
    pv = float(np.mean([r.mean_overlap for r in records]))
    pfr = float(np.mean([r.penetrates for r in records]))
    pdr = float(np.mean([r.duration_ratio for r in records]))
    return pv, pfr, pdr


def penetration_metrics(
    pairs: Sequence[InteractionPair],
    skeleton: SkeletonSpec,
    resolution: float = DEFAULT_RESOLUTION,
) -> Tuple[float, float, float]:
    """
    (PV, PFR, PDR) of denormalized interaction pairs.

    Raises:
        InsufficientSamples: If no pairs are given
    """
    records = measure_pairs(pairs, skeleton, resolution)
    return penetration_from_overlaps([r.overlaps for r in records])


def contact_ratio_from_records(records: Sequence[SequenceOverlap], severe_threshold_voxels: int) -> float:
    annotated = [r for r in records if r.contact_annotated]
    if not annotated:
        raise InsufficientSamples("contact_ratio needs at least one contact-annotated sequence")
    valid = sum(1 for r in annotated if r.is_valid_contact(severe_threshold_voxels))
    return valid / len(annotated)


def contact_ratio(
    pairs: Sequence[InteractionPair],
    skeleton: SkeletonSpec,
    resolution: float = DEFAULT_RESOLUTION,
    dilation_voxels: int = 1,
    severe_threshold_voxels: int = 27,
) -> float:
    """
    Fraction of contact-annotated pairs that touch without severe penetration.

    Raises:
        InsufficientSamples: If no pair is contact-annotated
    """
    annotated = [p for p in pairs if p.contact_annotated]
    if not annotated:
        raise InsufficientSamples("contact_ratio needs at least one contact-annotated sequence")
    records = measure_pairs(annotated, skeleton, resolution, dilation_voxels)
    return contact_ratio_from_records(records, severe_threshold_voxels)


def evaluate_physics(
    pairs: Sequence[InteractionPair],
    skeleton: SkeletonSpec,
    cfg: Optional[EvalConfig] = None,
    progress: bool = False,
) -> PenetrationReport:
    """
    Full physics report: PV (both averagings), PFR, PDR and contact ratio.
    """
    cfg = cfg or EvalConfig()
    records = measure_pairs(pairs, skeleton, cfg.voxel_resolution, cfg.dilation_voxels, progress)
    pv, pfr, pdr = penetration_from_overlaps([r.overlaps for r in records])
    pooled = np.concatenate([np.asarray(r.overlaps, dtype=np.float64) for r in records])

    if any(r.contact_annotated for r in records):
        ratio = contact_ratio_from_records(records, cfg.severe_threshold_voxels)
    else:
        logger.warning("No contact-annotated sequences; contact_ratio left empty")
        ratio = None

    report = PenetrationReport(
        pv=pv,
        pv_pooled=float(pooled.mean()) if pooled.size else 0.0,
        pfr=pfr,
        pdr=pdr,
        contact_ratio=ratio,
        per_sequence=records,
        resolution=cfg.voxel_resolution,
        dilation_voxels=cfg.dilation_voxels,
        severe_threshold_voxels=cfg.severe_threshold_voxels,
    )
    logger.info("%r", report)
    return report


def _point_in_capsules(x: float, y: float, z: float, capsules: List[Tuple]) -> bool:
    for (ax, ay, az), (bx, by, bz), radius in capsules:
        abx, aby, abz = bx - ax, by - ay, bz - az
        dx, dy, dz = x - ax, y - ay, z - az
        length_sq = abx * abx + aby * aby + abz * abz
        t = 0.0
        if length_sq > 0.0:
            t = (dx * abx + dy * aby + dz * abz) / length_sq
            t = min(max(t, 0.0), 1.0)
        ex = dx - t * abx
        ey = dy - t * aby
        ez = dz - t * abz
        if ex * ex + ey * ey + ez * ez <= (radius + INCLUSION_TOL) ** 2:
            return True
    return False


def _frame_capsules(body: BodyVolume, frame: int) -> List[Tuple]:
    return [
        (
            tuple(float(v) for v in body.starts[frame, c]),
            tuple(float(v) for v in body.ends[frame, c]),
            float(body.radii[c]),
        )
        for c in range(body.capsule_count)
    ]


def _scan_range(capsules: List[Tuple], axis: int, resolution: float) -> Tuple[int, int]:
    lo = min(min(a[axis], b[axis]) - r for a, b, r in capsules)
    hi = max(max(a[axis], b[axis]) + r for a, b, r in capsules)
    return math.floor(lo / resolution) - 1, math.ceil(hi / resolution) + 1


def brute_force_overlap_oracle(
    body_a: BodyVolume, body_b: BodyVolume, frame: int, resolution: float = DEFAULT_RESOLUTION
) -> int:
    """
    Shared voxels of one frame by testing every lattice centre in the common box.

    Plain Python loops, independent of voxelize and voxel_overlap.
    """
    caps_a = _frame_capsules(body_a, frame)
    caps_b = _frame_capsules(body_b, frame)
    if not caps_a or not caps_b:
        return 0

    ranges = []
    for axis in range(3):
        lo_a, hi_a = _scan_range(caps_a, axis, resolution)
        lo_b, hi_b = _scan_range(caps_b, axis, resolution)
        ranges.append(range(max(lo_a, lo_b), min(hi_a, hi_b) + 1))

    count = 0
    for i in ranges[0]:
        x = i * resolution
        for j in ranges[1]:
            y = j * resolution
            for k in ranges[2]:
                z = k * resolution
                if _point_in_capsules(x, y, z, caps_a) and _point_in_capsules(x, y, z, caps_b):
                    count += 1
    return count


def overlap_by_voxel_sets(
    body_a: BodyVolume, body_b: BodyVolume, frame: int, resolution: float = DEFAULT_RESOLUTION
) -> int:
    """voxel_overlap(voxelize(a), voxelize(b)) for one frame."""
    return voxel_overlap(voxelize(body_a, frame, resolution), voxelize(body_b, frame, resolution))

