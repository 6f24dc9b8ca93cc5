"""
Synthetic two-person interaction clips.

Four parameterized families stand in for captured interaction data:

- approach: the two people walk toward each other and stop, arms relaxed
- circle: both orbit a shared centre at close range while facing each other; the
  torsos interpenetrate throughout (severe penetration, never a valid contact)
- reach-and-touch: both extend one arm forward until the hands meet (wrist gap 4.0-4.6 cm)
- push-retreat: one person walks in and presses a hand onto the partner's shoulder,
  then the partner steps back

Clip i uses family i % 4 and its own generator numpy.random.default_rng(seed ^ i),
so a dataset is a pure function of (seed, count, skeleton, layout, frame range)
and clips can be produced in any order.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from scipy.spatial.transform import Rotation, Slerp

from src.core.motion import (
    FOOT_FLAG_COUNT,
    InteractionPair,
    MotionLayout,
    MotionSequence,
    SkeletonSpec,
)
from src.motion.kinematics import forward_kinematics_torch, matrix_to_rot6d_torch
from src.motion.skeleton import standing_height

logger = logging.getLogger(__name__)

FAMILIES = ("approach", "circle", "reach-and-touch", "push-retreat")
CONTACT_FAMILIES = frozenset({"reach-and-touch", "push-retreat"})

TEXT_TEMPLATES: Dict[str, Tuple[str, ...]] = {
    "approach": (
        "two people walk toward each other and stop",
        "the two persons approach one another",
        "two people come closer until they stand face to face",
    ),
    "circle": (
        "two people circle around each other",
        "the pair walks in a circle while facing each other",
        "two persons orbit one another slowly",
    ),
    "reach-and-touch": (
        "two people reach out and touch hands",
        "the two persons extend their arms until their hands meet",
        "two people stretch out a hand and touch",
    ),
    "push-retreat": (
        "one person pushes the other on the shoulder and the other steps back",
        "a person shoves the partner who then retreats",
        "one person presses a hand on the other's shoulder and the other backs away",
    ),
}

CIRCLE_RADIUS = (0.07, 0.09)
REACH_GAP = (0.040, 0.046)
PUSH_GAP = (0.065, 0.075)
PUSH_TRAVEL = 0.6

FOOT_HEIGHT = 0.12
FOOT_SPEED = 0.5


def family_of_text(text: str) -> Optional[str]:
    """Family whose template vocabulary contains text, else None."""
    for family, templates in TEXT_TEMPLATES.items():
        if text in templates:
            return family
    return None


@dataclass
class PairTrack:
    """
    Pair-frame description of one clip before global placement.

    root_xz: (2, N, 2) ground positions of persons A and B
    heading: (2, N) yaw angles (0 faces +z)
    left_arm, right_arm: (2, N) blend weights, 0 = relaxed, 1 = forward
    """
    root_xz: np.ndarray
    heading: np.ndarray
    left_arm: np.ndarray
    right_arm: np.ndarray


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def hold_window(frames: int) -> Tuple[int, int]:
    """[start, end) frames of the hold phase; never empty."""
    start = frames // 3
    return start, max(start + 1, (2 * frames) // 3)


def hold_profile(frames: int) -> np.ndarray:
    """Ramp 0 -> 1, hold at 1, ramp back down."""
    start, end = hold_window(frames)
    f = np.arange(frames, dtype=np.float64)
    w = np.ones(frames)
    if start > 0:
        w[:start] = f[:start] / start
    w[end:] = (frames - 1 - f[end:]) / (frames - end)
    return w


class SyntheticInteractionGenerator:
    """
    Generates InteractionPair clips for one skeleton and layout.

    Args:
        skeleton: Skeleton with roles left/right shoulder and wrist
        layout: Output feature layout
        fps: Frame rate for finite-difference velocities
    """

    def __init__(self, skeleton: SkeletonSpec, layout: MotionLayout, fps: float = 20.0):
        missing = {"left_shoulder", "left_wrist", "right_shoulder", "right_wrist"} - set(skeleton.roles)
        if missing:
            raise ValueError(f"Skeleton '{skeleton.name}' lacks roles {sorted(missing)}")
        self.skeleton = skeleton
        self.layout = layout
        self.fps = fps
        self.root_height = standing_height(skeleton)

        self._arm_slerp = {
            "left": Slerp([0.0, 1.0], Rotation.from_euler("zy", [[-90, 0], [0, -90]], degrees=True)),
            "right": Slerp([0.0, 1.0], Rotation.from_euler("zy", [[90, 0], [0, 90]], degrees=True)),
        }
        self._offsets = torch.from_numpy(skeleton.rest_offset)
        logger.debug("Generator ready: %s, %s, root height %.3f", skeleton, layout.value, self.root_height)

    # -- posing -----------------------------------------------------------

    def local_rotations(self, heading: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """(N, J, 3, 3) local rotations for one person."""
        frames = heading.shape[0]
        rot = np.tile(np.eye(3), (frames, self.skeleton.joint_count, 1, 1))
        rot[:, 0] = Rotation.from_euler("y", heading).as_matrix()
        rot[:, self.skeleton.roles["left_shoulder"]] = self._arm_slerp["left"](left).as_matrix()
        rot[:, self.skeleton.roles["right_shoulder"]] = self._arm_slerp["right"](right).as_matrix()
        return rot

    def _pose_positions(self, root: np.ndarray, rotations: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return forward_kinematics_torch(
                self.skeleton.parent_index,
                self._offsets,
                torch.from_numpy(root),
                torch.from_numpy(rotations),
            ).numpy()

    def _contact_separation(self, gap: float, joint_a: int, joint_b: int, b_forward: str) -> float:
        """
        Pair-frame distance S between the roots so that A's joint_a and B's joint_b
        are gap metres apart, with A's left arm forward and B facing A.

        b_forward names B's arm held forward ("right") or "" for relaxed arms.
        """
        one = np.ones(1)
        zero = np.zeros(1)
        rot_a = self.local_rotations(zero, one, zero)
        rot_b = self.local_rotations(zero, zero, one if b_forward == "right" else zero)
        pa = self._pose_positions(np.zeros((1, 3)), rot_a)[0, joint_a]
        pb = self._pose_positions(np.zeros((1, 3)), rot_b)[0, joint_b]
        # B is turned by pi about y: (x, y, z) -> (-x, y, S - z)
        lateral_sq = (-pb[0] - pa[0]) ** 2 + (pb[1] - pa[1]) ** 2
        dz = np.sqrt(max(gap * gap - lateral_sq, 0.0))
        return float(pa[2] + pb[2] + dz)

    # -- families ---------------------------------------------------------

    def _track(self, family: str, frames: int, rng: np.random.Generator) -> PairTrack:
        zeros = np.zeros((2, frames))
        heading = np.stack([np.zeros(frames), np.full(frames, np.pi)])
        root = np.zeros((2, frames, 2))
        left = zeros.copy()
        right = zeros.copy()
        s = np.arange(frames) / max(frames - 1, 1)

        if family == "approach":
            d0 = rng.uniform(2.5, 3.5)
            d1 = rng.uniform(1.0, 1.4)
            d = d0 + (d1 - d0) * _smoothstep(s)
            root[0, :, 1] = -d / 2
            root[1, :, 1] = d / 2

        elif family == "circle":
            radius = rng.uniform(*CIRCLE_RADIUS)
            theta0 = rng.uniform(-np.pi, np.pi)
            omega = rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0])
            theta = theta0 + omega * np.arange(frames) / self.fps
            ring = np.stack([np.sin(theta), np.cos(theta)], axis=-1) * radius
            root[0] = ring
            root[1] = -ring
            heading[0] = np.arctan2(-ring[:, 0], -ring[:, 1])
            heading[1] = np.arctan2(ring[:, 0], ring[:, 1])

        elif family == "reach-and-touch":
            gap = rng.uniform(*REACH_GAP)
            sep = self._contact_separation(
                gap, self.skeleton.roles["left_wrist"], self.skeleton.roles["right_wrist"], "right"
            )
            root[1, :, 1] = sep
            profile = hold_profile(frames)
            left[0] = profile
            right[1] = profile

        elif family == "push-retreat":
            gap = rng.uniform(*PUSH_GAP)
            sep = self._contact_separation(
                gap, self.skeleton.roles["left_wrist"], self.skeleton.roles["right_shoulder"], ""
            )
            start, end = hold_window(frames)
            f = np.arange(frames)
            approach = _smoothstep(f / start) if start > 0 else np.ones(frames)
            retreat = _smoothstep((f - end + 1) / max(frames - end, 1)) * (f >= end)
            root[0, :, 1] = -PUSH_TRAVEL * (1.0 - approach)
            root[1, :, 1] = sep + PUSH_TRAVEL * retreat
            left[0] = hold_profile(frames)

        else:
            raise ValueError(f"Unknown family '{family}'. Families: {list(FAMILIES)}")

        return PairTrack(root_xz=root, heading=heading, left_arm=left, right_arm=right)

    # -- packing ----------------------------------------------------------

    def _person(self, root_xz: np.ndarray, heading: np.ndarray, left: np.ndarray,
                right: np.ndarray) -> MotionSequence:
        frames = root_xz.shape[0]
        root = np.stack([root_xz[:, 0], np.full(frames, self.root_height), root_xz[:, 1]], axis=-1)
        rotations = self.local_rotations(heading, left, right)
        positions = self._pose_positions(root, rotations)
        data = pack_features(self.layout, self.skeleton, positions, rotations, self.fps)
        return MotionSequence(layout=self.layout, data=data.astype(np.float32))

    def generate(self, family: str, frames: int, rng: np.random.Generator) -> Tuple[MotionSequence, MotionSequence]:
        """
        One clip of a family, placed with a random global yaw and ground offset.
        """
        track = self._track(family, frames, rng)
        yaw = rng.uniform(-np.pi, np.pi)
        offset = rng.uniform(-1.0, 1.0, size=2)

        turn = Rotation.from_euler("y", yaw).as_matrix()
        people = []
        for k in range(2):
            xyz = np.stack([track.root_xz[k, :, 0], np.zeros(frames), track.root_xz[k, :, 1]], axis=-1)
            placed = xyz @ turn.T
            root_xz = placed[:, [0, 2]] + offset
            people.append(
                self._person(root_xz, track.heading[k] + yaw, track.left_arm[k], track.right_arm[k])
            )
        return people[0], people[1]


def finite_difference_velocity(positions: np.ndarray, fps: float) -> np.ndarray:
    """v[f] = (p[f] - p[f-1]) * fps for f >= 1 and v[0] = v[1]; zeros for one frame."""
    velocity = np.zeros_like(positions)
    if positions.shape[0] > 1:
        velocity[1:] = (positions[1:] - positions[:-1]) * fps
        velocity[0] = velocity[1]
    return velocity


def foot_contact_flags(positions: np.ndarray, velocity: np.ndarray, foot_joints: List[int]) -> np.ndarray:
    """(N, 4) flags: a foot joint is planted when low and slow."""
    height = positions[:, foot_joints, 1]
    speed = np.linalg.norm(velocity[:, foot_joints], axis=-1)
    return ((height < FOOT_HEIGHT) & (speed < FOOT_SPEED)).astype(np.float64)


def pack_features(
    layout: MotionLayout,
    skeleton: SkeletonSpec,
    positions: np.ndarray,
    rotations: np.ndarray,
    fps: float,
) -> np.ndarray:
    """
    Pack per-frame joint positions (N, J, 3) and local rotations (N, J, 3, 3)
    into the layout's (N, D) features.
    """
    frames, J = positions.shape[:2]
    velocity = finite_difference_velocity(positions, fps)
    with torch.no_grad():
        rot6d = matrix_to_rot6d_torch(torch.from_numpy(rotations)).numpy()

    if layout is MotionLayout.IH262:
        flags = foot_contact_flags(positions, velocity, skeleton.foot_joints[:FOOT_FLAG_COUNT])
        return np.concatenate(
            [
                positions.reshape(frames, J * 3),
                velocity.reshape(frames, J * 3),
                rot6d[:, 1:].reshape(frames, (J - 1) * 6),
                flags,
            ],
            axis=-1,
        )

    row0 = np.concatenate([positions[:, 0], velocity[:, 0]], axis=-1)[:, None, :]
    return np.concatenate([row0, rot6d], axis=1).reshape(frames, (J + 1) * 6)


def synth_dataset(
    seed: int,
    count: int,
    skeleton: SkeletonSpec,
    layout: MotionLayout,
    frame_range: Tuple[int, int] = (32, 32),
    fps: float = 20.0,
) -> List[InteractionPair]:
    """
    Generate count interaction clips.

    Args:
        seed: Non-negative dataset seed; clip i uses default_rng(seed ^ i)
        count: Number of clips (>= 1)
        skeleton: Skeleton with arm roles
        layout: Output layout
        frame_range: Inclusive (min, max) clip length
        fps: Frame rate

    Returns:
        List of InteractionPair; contact_annotated is True exactly for the
        reach-and-touch and push-retreat families

    Raises:
        ValueError: If count < 1 or the frame range is invalid
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    low, high = frame_range
    if not 2 <= low <= high:
        raise ValueError(f"frame_range must satisfy 2 <= min <= max, got {frame_range}")

    generator = SyntheticInteractionGenerator(skeleton, layout, fps)
    pairs = []
    for index in range(count):
        rng = np.random.default_rng(seed ^ index)
        family = FAMILIES[index % len(FAMILIES)]
        frames = int(rng.integers(low, high + 1))
        templates = TEXT_TEMPLATES[family]
        text = templates[int(rng.integers(len(templates)))]
        person_a, person_b = generator.generate(family, frames, rng)
        pairs.append(
            InteractionPair(
                person_a=person_a,
                person_b=person_b,
                text=text,
                contact_annotated=family in CONTACT_FAMILIES,
            )
        )

    logger.info("Synthesized %d clips (%s, %s)", count, skeleton.name, layout.value)
    return pairs
