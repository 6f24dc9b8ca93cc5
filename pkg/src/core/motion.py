"""
Motion data structures: skeletons, per-person motion sequences, interaction pairs.

Two feature layouts are supported:

- IH262: per frame, J*3 global joint positions, J*3 global velocities,
  (J-1)*6 local 6D rotations (root excluded) and 4 foot-contact flags.
  With the 22-joint AMASS skeleton this is 262 channels.
- IX56x6: per frame, (J+1) rows of 6 values. Row 0 is [root translation,
  root velocity], rows 1..J are 6D joint rotations (row 1 is the root's
  global orientation). With 55 joints this is 56x6 = 336 channels.

The layouts generalize to any joint count, which is how the small toy
skeleton reuses them.
"""

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.errors import DatasetIOError, DegenerateRotation, ShapeMismatch

FOOT_FLAG_COUNT = 4


class MotionLayout(Enum):
    """
    Per-frame feature packing of a MotionSequence.
    """
    IH262 = "IH262"  # global positions + velocities + local rotations + foot flags
    IX56x6 = "IX56x6"  # translation/velocity row + one 6D rotation row per joint


def feature_dim(layout: MotionLayout, joint_count: int) -> int:
    """
    Number of channels per frame for a layout and skeleton size.

    Examples:
        >>> feature_dim(MotionLayout.IH262, 22)
        262
        >>> feature_dim(MotionLayout.IX56x6, 55)
        336
    """
    if layout is MotionLayout.IH262:
        return 12 * joint_count - 2
    return 6 * (joint_count + 1)


def joint_count_for(layout: MotionLayout, dim: int) -> int:
    """
    Invert feature_dim; raises ShapeMismatch when dim fits no skeleton.
    """
    if layout is MotionLayout.IH262:
        if (dim + 2) % 12 != 0 or dim < 10:
            raise ShapeMismatch(f"IH262 feature dim must be 12*J-2, got {dim}")
        return (dim + 2) // 12
    if dim % 6 != 0 or dim < 12:
        raise ShapeMismatch(f"IX56x6 feature dim must be 6*(J+1), got {dim}")
    return dim // 6 - 1


def ih_channels(joint_count: int) -> Dict[str, slice]:
    """
    Channel slices of the IH262 layout for a given joint count.

    Returns:
        Dict with 'positions', 'velocities', 'rotations', 'foot_contacts'
    """
    j3 = joint_count * 3
    rot_end = 2 * j3 + (joint_count - 1) * 6
    return {
        "positions": slice(0, j3),
        "velocities": slice(j3, 2 * j3),
        "rotations": slice(2 * j3, rot_end),
        "foot_contacts": slice(rot_end, rot_end + FOOT_FLAG_COUNT),
    }


@dataclass
class SkeletonSpec:
    """
    Kinematic tree with rest-pose offsets and the capsule radii used for voxelization.

    Attributes:
        joint_count: Number of joints (J)
        parent_index: Parent of each joint, -1 for the root
        rest_offset: (J, 3) offset of each joint from its parent in metres (y-up)
        joint_names: Human-readable joint names
        bone_radius: (J,) capsule radius of the bone ending at each joint (root unused)
        foot_joints: The 4 joints whose contact flags the IH262 layout stores
        roles: Named joints the synthetic generator animates
               (left/right shoulder and wrist)
        name: Short identifier ("toy8", "amass22", "smplx55")
    """
    joint_count: int
    parent_index: List[int]
    rest_offset: np.ndarray
    joint_names: List[str] = field(default_factory=list)
    bone_radius: Optional[np.ndarray] = None
    foot_joints: List[int] = field(default_factory=list)
    roles: Dict[str, int] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self):
        self.rest_offset = np.asarray(self.rest_offset, dtype=np.float64)
        if len(self.parent_index) != self.joint_count:
            raise ShapeMismatch(
                f"parent_index has {len(self.parent_index)} entries for {self.joint_count} joints"
            )
        if self.rest_offset.shape != (self.joint_count, 3):
            raise ShapeMismatch(f"rest_offset must be ({self.joint_count}, 3), got {self.rest_offset.shape}")
        if not np.all(np.isfinite(self.rest_offset)):
            raise ValueError("rest_offset must be finite")

        roots = [j for j, p in enumerate(self.parent_index) if p == -1]
        if roots != [0]:
            raise ValueError(f"Skeleton needs exactly one root at index 0, got roots {roots}")
        for j, p in enumerate(self.parent_index[1:], start=1):
            if not 0 <= p < j:
                raise ValueError(f"Joint {j} has parent {p}; parents must precede children")

        if not self.joint_names:
            self.joint_names = [f"joint_{j}" for j in range(self.joint_count)]
        if self.bone_radius is None:
            self.bone_radius = np.full(self.joint_count, 0.05)
        self.bone_radius = np.asarray(self.bone_radius, dtype=np.float64)
        if not self.foot_joints:
            self.foot_joints = [0] * FOOT_FLAG_COUNT

    def bones(self) -> List[Tuple[int, int, float]]:
        """
        Capsule table: one (parent, child, radius) entry per non-root joint.
        """
        return [
            (self.parent_index[j], j, float(self.bone_radius[j]))
            for j in range(1, self.joint_count)
        ]

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "joint_names": list(self.joint_names),
            "parents": list(self.parent_index),
            "offsets": self.rest_offset.tolist(),
            "bone_radius": self.bone_radius.tolist(),
            "foot_joints": list(self.foot_joints),
            "roles": dict(self.roles),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SkeletonSpec":
        return cls(
            joint_count=len(data["parents"]),
            parent_index=[int(p) for p in data["parents"]],
            rest_offset=np.asarray(data["offsets"], dtype=np.float64),
            joint_names=list(data.get("joint_names", [])),
            bone_radius=np.asarray(data["bone_radius"]) if "bone_radius" in data else None,
            foot_joints=[int(j) for j in data.get("foot_joints", [])],
            roles={k: int(v) for k, v in data.get("roles", {}).items()},
            name=data.get("name", "custom"),
        )

    @classmethod
    def load(cls, path: Path) -> "SkeletonSpec":
        """
        Load a skeleton specification JSON file.

        Raises:
            DatasetIOError: If the file cannot be read
        """
        try:
            with open(path, "r") as f:
                return cls.from_dict(json.load(f))
        except OSError as exc:
            raise DatasetIOError(f"Cannot read skeleton file {path}: {exc}") from exc

    def save(self, path: Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def content_hash(self) -> str:
        """
        SHA-256 over the canonical JSON form; identifies the skeleton in file headers.
        """
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def __repr__(self) -> str:
        return f"SkeletonSpec(name='{self.name}', joints={self.joint_count})"


@dataclass
class Rotation6D:
    """
    First two columns (a1, a2) of a rotation matrix, concatenated.

    Decoded to SO(3) with Gram-Schmidt by src.motion.kinematics.rot6d_to_matrix.
    """
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (6,):
            raise ShapeMismatch(f"Rotation6D needs 6 values, got shape {self.values.shape}")


@dataclass
class MotionSequence:
    """
    One person's motion clip: N frames of layout-packed features.

    Attributes:
        layout: Feature packing (IH262 or IX56x6)
        data: (N, D) float array
        normalized: True when data holds z-scores; rotation rows are then not checked
    """
    layout: MotionLayout
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ShapeMismatch(f"Motion data must be (N>=1, D), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("Motion data contains NaN or Inf")
        joint_count_for(self.layout, self.data.shape[1])
        if self.layout is MotionLayout.IX56x6 and not self.normalized:
            rows = self.data.reshape(self.frames, -1, 6)[:, 1:, :3]
            if np.any(np.linalg.norm(rows, axis=-1) <= 1e-8):
                raise DegenerateRotation("IX56x6 rotation row has a vanishing first column")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def joint_count(self) -> int:
        return joint_count_for(self.layout, self.dim)

    def with_data(self, data: np.ndarray) -> "MotionSequence":
        return MotionSequence(layout=self.layout, data=data, normalized=self.normalized)

    def __repr__(self) -> str:
        return f"MotionSequence(layout={self.layout.value}, frames={self.frames}, dim={self.dim})"


@dataclass
class InteractionPair:
    """
    A synchronized two-person clip with its text label and contact annotation.
    """
    person_a: MotionSequence
    person_b: MotionSequence
    text: str
    contact_annotated: bool

    def __post_init__(self):
        if self.person_a.layout is not self.person_b.layout:
            raise ShapeMismatch(
                f"Persons use different layouts: {self.person_a.layout} vs {self.person_b.layout}"
            )
        if self.person_a.data.shape != self.person_b.data.shape:
            raise ShapeMismatch(
                f"Persons differ in shape: {self.person_a.data.shape} vs {self.person_b.data.shape}"
            )

    @property
    def frames(self) -> int:
        return self.person_a.frames

    @property
    def layout(self) -> MotionLayout:
        return self.person_a.layout

    def __repr__(self) -> str:
        return (
            f"InteractionPair(frames={self.frames}, layout={self.layout.value}, "
            f"contact={self.contact_annotated}, text='{self.text}')"
        )
