"""
Named skeletons.

toy8 and amass22 ship as JSON files in data/skeletons/. smplx55 extends the
22-joint body with a jaw, two eyes and fifteen finger joints per hand, which is
the joint count of the 56x6 rotation layout.
"""

from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from src.core.motion import SkeletonSpec

SKELETON_DIR = Path(__file__).parent.parent.parent / "data" / "skeletons"

_FINGERS = ("thumb", "index", "middle", "ring", "pinky")


def available_skeletons() -> List[str]:
    shipped = sorted(p.stem for p in SKELETON_DIR.glob("*.json"))
    return shipped + ["smplx55"]


def load_skeleton(name: str, skeleton_dir: Optional[Path] = None) -> SkeletonSpec:
    """
    Load a skeleton by name or by path to a JSON file.

    Args:
        name: "toy8", "amass22", "smplx55", or a path ending in .json
        skeleton_dir: Optional directory to look up named skeletons

    Raises:
        KeyError: If the name is unknown
    """
    if name.endswith(".json"):
        return SkeletonSpec.load(Path(name))
    if name == "smplx55":
        return smplx55_skeleton(load_skeleton("amass22", skeleton_dir))

    path = (skeleton_dir or SKELETON_DIR) / f"{name}.json"
    if not path.exists():
        raise KeyError(f"Skeleton '{name}' not found. Available skeletons: {available_skeletons()}")
    return SkeletonSpec.load(path)


def smplx55_skeleton(body: SkeletonSpec) -> SkeletonSpec:
    """
    Extend the 22-joint body with jaw, eyes and 2 x 15 finger joints.
    """
    names = list(body.joint_names)
    parents = list(body.parent_index)
    offsets = [row for row in body.rest_offset]
    radii = list(body.bone_radius)
    index: Dict[str, int] = {n: i for i, n in enumerate(names)}

    def add(name: str, parent: int, offset, radius: float) -> int:
        names.append(name)
        parents.append(parent)
        offsets.append(np.asarray(offset, dtype=np.float64))
        radii.append(radius)
        return len(names) - 1

    head = index["head"]
    add("jaw", head, (0.0, -0.02, 0.03), 0.03)
    add("left_eye", head, (0.03, 0.05, 0.07), 0.012)
    add("right_eye", head, (-0.03, 0.05, 0.07), 0.012)

    for side, sign in (("left", 1.0), ("right", -1.0)):
        wrist = index[f"{side}_wrist"]
        for k, finger in enumerate(_FINGERS):
            spread = -0.03 + 0.015 * k
            j = add(f"{side}_{finger}1", wrist, (sign * 0.08, 0.0, spread), 0.012)
            j = add(f"{side}_{finger}2", j, (sign * 0.03, 0.0, 0.0), 0.011)
            add(f"{side}_{finger}3", j, (sign * 0.02, 0.0, 0.0), 0.01)

    return SkeletonSpec(
        joint_count=len(names),
        parent_index=parents,
        rest_offset=np.stack(offsets),
        joint_names=names,
        bone_radius=np.asarray(radii),
        foot_joints=list(body.foot_joints),
        roles=dict(body.roles),
        name="smplx55",
    )


def rest_pose(skeleton: SkeletonSpec) -> np.ndarray:
    """(J, 3) joint positions of the rest pose with the root at the origin."""
    positions = np.zeros((skeleton.joint_count, 3))
    for j in range(1, skeleton.joint_count):
        positions[j] = positions[skeleton.parent_index[j]] + skeleton.rest_offset[j]
    return positions


def standing_height(skeleton: SkeletonSpec) -> float:
    """Root height that puts the lowest rest-pose joint 5 cm above the ground."""
    return float(-rest_pose(skeleton)[:, 1].min() + 0.05)
