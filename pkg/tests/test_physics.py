"""
Test capsule voxelization, overlap counting, penetration and contact metrics.
"""

import json
from dataclasses import replace

import numpy as np
import pytest

from src.contrastive.triplet import translate_ground
from src.core.config import EvalConfig
from src.core.errors import InsufficientSamples, LatticeMismatch, ShapeMismatch
from src.core.motion import InteractionPair, MotionLayout
from src.data.synthetic import family_of_text, synth_dataset
from src.motion.skeleton import load_skeleton
from src.physics.penetration import (
    SequenceOverlap,
    brute_force_overlap_oracle,
    contact_ratio,
    contact_ratio_from_records,
    evaluate_physics,
    frame_overlap,
    overlap_by_voxel_sets,
    penetration_from_overlaps,
    penetration_metrics,
    sequence_overlaps,
)
from src.physics.voxels import BodyVolume, VoxelGrid, dilate, voxel_overlap, voxelize

PITCH = 0.02


def sphere(centre, radius, frames=1):
    centre = np.broadcast_to(np.asarray(centre, dtype=np.float64), (frames, 1, 3))
    return BodyVolume(centre.copy(), centre.copy(), np.array([radius]))


def random_body(rng, capsules=3, frames=1, spread=0.1):
    starts = rng.uniform(-spread, spread, size=(frames, capsules, 3))
    ends = starts + rng.uniform(-spread, spread, size=(frames, capsules, 3))
    return BodyVolume(starts, ends, rng.uniform(0.0, 0.06, size=capsules))


def unit_cube(offset=(0, 0, 0)):
    indices = np.indices((50, 50, 50)).reshape(3, -1).T + np.asarray(offset)
    return VoxelGrid.from_indices(indices, PITCH)


def separated(pairs, distance=5.0):
    return [
        InteractionPair(
            person_a=p.person_a,
            person_b=translate_ground(p.person_b, (distance, 0.0)),
            text=p.text,
            contact_annotated=p.contact_annotated,
        )
        for p in pairs
    ]


def test_voxel_overlap_cubes():
    cube = unit_cube()
    assert len(cube) == 125000
    cases = [
        # (second grid, expected overlap)
        (unit_cube(), 125000),
        (unit_cube((25, 0, 0)), 62500),
        (unit_cube((0, 50, 0)), 0),
        (unit_cube((25, 25, 25)), 15625),
    ]
    for other, expected in cases:
        assert voxel_overlap(cube, other) == expected
        assert voxel_overlap(other, cube) == expected

    with pytest.raises(LatticeMismatch):
        voxel_overlap(cube, VoxelGrid.from_indices(np.zeros((1, 3)), 0.03))
    with pytest.raises(LatticeMismatch):
        voxel_overlap(cube, VoxelGrid(resolution=PITCH, keys=cube.keys, origin=(0.01, 0.0, 0.0)))
    with pytest.raises(ValueError):
        VoxelGrid(resolution=0.0, keys=[])


def test_voxel_grid_keys_round_trip_negative_indices():
    indices = np.array([[-3, 4, -5], [0, 0, 0], [7, -1, 2]])
    grid = VoxelGrid.from_indices(indices)
    assert grid.occupancy == {(-3, 4, -5), (0, 0, 0), (7, -1, 2)}
    assert len(VoxelGrid.from_indices(np.vstack([indices, indices]))) == 3


def test_voxelize_segment_and_sphere():
    segment = BodyVolume(np.zeros((1, 1, 3)), np.array([[[1.0, 0.0, 0.0]]]), np.array([0.0]))
    grid = voxelize(segment, 0, PITCH)
    assert len(grid) == 51
    assert grid.occupancy == {(i, 0, 0) for i in range(51)}

    centre = np.array([0.013, -0.007, 0.021])
    radius = 0.05
    scan = np.indices((21, 21, 21)).reshape(3, -1).T - 10
    inside = np.linalg.norm(scan * PITCH - centre, axis=-1) <= radius
    expected = {tuple(int(v) for v in row) for row in scan[inside]}
    assert voxelize(sphere(centre, radius), 0, PITCH).occupancy == expected

    empty = BodyVolume(np.zeros((1, 0, 3)), np.zeros((1, 0, 3)), np.zeros(0))
    assert len(voxelize(empty, 0)) == 0


def test_voxelize_translation_by_pitch():
    rng = np.random.default_rng(0)
    body = random_body(rng)
    base = voxelize(body, 0, PITCH).indices
    for axis in range(3):
        shift = np.zeros(3)
        shift[axis] = PITCH
        moved = voxelize(body.translated(shift), 0, PITCH).indices
        step = np.zeros(3, dtype=np.int64)
        step[axis] = 1
        assert {tuple(r) for r in moved} == {tuple(r) for r in base + step}


def test_body_volume_validation():
    with pytest.raises(ValueError):
        BodyVolume(np.zeros((1, 1, 3)), np.ones((1, 1, 3)), np.array([-0.1]))
    with pytest.raises(ShapeMismatch):
        BodyVolume(np.zeros((1, 2, 3)), np.zeros((1, 1, 3)), np.array([0.1]))
    with pytest.raises(ShapeMismatch):
        BodyVolume(np.zeros((1, 1, 3)), np.zeros((1, 1, 3)), np.array([0.1, 0.1]))
    with pytest.raises(ValueError):
        BodyVolume(np.full((1, 1, 3), np.nan), np.zeros((1, 1, 3)), np.array([0.1]))


def test_overlap_matches_brute_force_oracle():
    """100 random capsule configurations; every code path agrees exactly."""
    rng = np.random.default_rng(1)
    nonzero = 0
    for _ in range(100):
        body_a = random_body(rng)
        body_b = random_body(rng).translated(rng.uniform(-0.1, 0.1, size=3))
        oracle = brute_force_overlap_oracle(body_a, body_b, 0, PITCH)
        assert frame_overlap(body_a, body_b, 0, PITCH)[0] == oracle
        assert overlap_by_voxel_sets(body_a, body_b, 0, PITCH) == oracle
        assert frame_overlap(body_b, body_a, 0, PITCH)[0] == oracle
        nonzero += oracle > 0
    assert nonzero > 10

    empty = BodyVolume(np.zeros((1, 0, 3)), np.zeros((1, 0, 3)), np.zeros(0))
    assert brute_force_overlap_oracle(empty, sphere((0, 0, 0), 0.1), 0) == 0
    assert frame_overlap(empty, sphere((0, 0, 0), 0.1), 0) == (0, 0)


def test_overlap_translation_invariance_and_dilation_monotonicity():
    rng = np.random.default_rng(2)
    for _ in range(20):
        body_a = random_body(rng)
        body_b = random_body(rng)
        overlap, dilated = frame_overlap(body_a, body_b, 0, PITCH, dilation_voxels=1)
        _, dilated_twice = frame_overlap(body_a, body_b, 0, PITCH, dilation_voxels=2)
        assert overlap <= dilated <= dilated_twice

        shift = np.array([3, -2, 5]) * PITCH
        moved = frame_overlap(body_a.translated(shift), body_b.translated(shift), 0, PITCH, 1)
        assert moved == (overlap, dilated)


def test_dilate_grid():
    single = VoxelGrid.from_indices(np.zeros((1, 3)))
    assert len(dilate(single, 1)) == 7
    assert len(dilate(single, 2)) == 25
    assert dilate(single, 0) is single

    body_a, body_b = sphere((0, 0, 0), 0.05), sphere((0.115, 0.003, 0.001), 0.05)
    _, dilated = frame_overlap(body_a, body_b, 0, PITCH, dilation_voxels=1)
    grown = voxel_overlap(dilate(voxelize(body_a, 0)), dilate(voxelize(body_b, 0)))
    assert dilated == grown > 0


def test_penetration_from_overlaps_cases():
    cases = [
        # (per-sequence overlaps, (pv, pfr, pdr))
        ([[1] * 5 + [0] * 5, [0] * 10], (0.25, 0.5, 0.25)),
        ([[0] * 4, [0] * 7], (0.0, 0.0, 0.0)),
        ([[10, 0], [0, 0, 0, 4]], (3.0, 1.0, 0.375)),
    ]
    for overlaps, expected in cases:
        assert penetration_from_overlaps(overlaps) == pytest.approx(expected)
    with pytest.raises(InsufficientSamples):
        penetration_from_overlaps([])


def test_penetration_metrics_against_oracle():
    """Sequence metrics recomputed frame by frame with the brute-force oracle."""
    rng = np.random.default_rng(3)
    per_sequence = []
    for _ in range(4):
        body_a = random_body(rng, frames=3)
        body_b = random_body(rng, frames=3)
        overlaps, _ = sequence_overlaps(body_a, body_b, PITCH)
        assert overlaps == [brute_force_overlap_oracle(body_a, body_b, f, PITCH) for f in range(3)]
        per_sequence.append(overlaps)
    pv, pfr, pdr = penetration_from_overlaps(per_sequence)
    assert pv >= 0 and 0 <= pfr <= 1 and 0 <= pdr <= 1
    assert (pdr > 0) == (pfr > 0)

    with pytest.raises(ValueError):
        sequence_overlaps(random_body(rng, frames=2), random_body(rng, frames=3))


def test_penetration_metrics_on_pairs():
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(2, 4, skeleton, MotionLayout.IH262, (8, 8))
    assert penetration_metrics(separated(pairs), skeleton) == (0.0, 0.0, 0.0)
    pv, pfr, pdr = penetration_metrics(pairs, skeleton)
    assert pv >= 0 and 0 <= pfr <= 1 and 0 <= pdr <= 1
    with pytest.raises(InsufficientSamples):
        penetration_metrics([], skeleton)


def test_contact_decisions():
    """Grazing counts as contact; deep interpenetration does not."""
    grazing_a, grazing_b = sphere((0, 0, 0), 0.05), sphere((0.115, 0.003, 0.001), 0.05)
    overlap, dilated = frame_overlap(grazing_a, grazing_b, 0, PITCH, dilation_voxels=1)
    assert overlap == 0 and dilated > 0

    deep_a, deep_b = sphere((0, 0, 0), 0.15), sphere((0.01, 0.0, 0.0), 0.15)
    deep, deep_dilated = frame_overlap(deep_a, deep_b, 0, PITCH, dilation_voxels=1)
    assert deep > 1000

    records = [
        SequenceOverlap(index=0, overlaps=[0, overlap], dilated=[0, dilated], contact_annotated=True),
        SequenceOverlap(index=1, overlaps=[deep], dilated=[deep_dilated], contact_annotated=True),
        SequenceOverlap(index=2, overlaps=[0, 0], dilated=[0, 0], contact_annotated=True),
        SequenceOverlap(index=3, overlaps=[0], dilated=[5], contact_annotated=False),
    ]
    assert records[0].is_valid_contact(27)
    assert not records[1].is_valid_contact(27)
    assert not records[2].is_valid_contact(27)
    assert contact_ratio_from_records(records, 27) == pytest.approx(1 / 3)
    assert contact_ratio_from_records(records, 10 ** 6) == pytest.approx(2 / 3)
    with pytest.raises(InsufficientSamples):
        contact_ratio_from_records(records[3:], 27)

    cube_side = 0.06 / PITCH
    assert cube_side ** 3 == pytest.approx(27)


def test_contact_ratio_on_pairs():
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(5, 8, skeleton, MotionLayout.IH262, (12, 12))
    touching = [p for p in pairs if family_of_text(p.text) == "reach-and-touch"]
    assert contact_ratio(touching, skeleton) > 0.0
    assert contact_ratio(separated(touching), skeleton) == 0.0
    with pytest.raises(InsufficientSamples):
        contact_ratio([p for p in pairs if not p.contact_annotated], skeleton)


def test_touch_penetrates_less_than_circle():
    """Touching hands overlap lightly and briefly; close circling overlaps deeply on every frame."""
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(5, 8, skeleton, MotionLayout.IH262, (12, 12))
    touch = [p for p in pairs if family_of_text(p.text) == "reach-and-touch"]
    circle = [p for p in pairs if family_of_text(p.text) == "circle"]
    assert touch and circle

    touch_pv, _, touch_pdr = penetration_metrics(touch, skeleton)
    circle_pv, circle_pfr, circle_pdr = penetration_metrics(circle, skeleton)
    assert touch_pv < circle_pv
    assert touch_pdr < circle_pdr
    assert circle_pfr == 1.0 and circle_pdr == 1.0

    annotated = [replace(p, contact_annotated=True) for p in circle]
    assert contact_ratio(annotated, skeleton) == 0.0
    assert contact_ratio(touch, skeleton) > contact_ratio(annotated, skeleton)


def test_evaluate_physics_report(tmp_path):
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(4, 8, skeleton, MotionLayout.IH262, (10, 10))
    report = evaluate_physics(pairs, skeleton, EvalConfig())
    assert len(report.per_sequence) == 8
    assert report.pv >= 0 and report.pv_pooled >= 0
    assert 0 <= report.pfr <= 1 and 0 <= report.pdr <= 1
    assert 0 <= report.contact_ratio <= 1
    assert report.pv == pytest.approx(report.pv_pooled)
    for record in report.per_sequence:
        assert record.max_overlap <= record.max_dilated

    path = tmp_path / "physics.json"
    report.save(path)
    data = json.loads(path.read_text())
    assert data["severe_threshold_voxels"] == 27
    assert len(data["per_sequence"]) == 8
    assert set(data["per_sequence"][0]) >= {"mean_overlap", "max_overlap", "penetrating_frames"}

    plain = [p for p in pairs if not p.contact_annotated]
    assert evaluate_physics(plain, skeleton).contact_ratio is None


def main():
    """Run all tests."""
    print("=" * 60)
    print("PHYSICS TESTS")
    print("=" * 60)
    test_voxel_overlap_cubes()
    test_voxel_grid_keys_round_trip_negative_indices()
    test_voxelize_segment_and_sphere()
    test_voxelize_translation_by_pitch()
    test_body_volume_validation()
    test_overlap_matches_brute_force_oracle()
    test_overlap_translation_invariance_and_dilation_monotonicity()
    test_dilate_grid()
    test_penetration_from_overlaps_cases()
    test_penetration_metrics_against_oracle()
    test_penetration_metrics_on_pairs()
    test_contact_decisions()
    test_contact_ratio_on_pairs()
    test_touch_penetrates_less_than_circle()
    print("✓ All physics tests passed")


if __name__ == "__main__":
    main()
