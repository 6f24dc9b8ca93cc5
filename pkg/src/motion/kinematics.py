"""
Rotations and forward kinematics.

The 6D rotation stores the first two columns (a1, a2) of a rotation matrix.
Gram-Schmidt rebuilds an orthonormal right-handed frame from them:

    b1 = a1 / |a1|
    b2 = normalize(a2 - (a2 . b1) b1)
    b3 = b1 x b2
    R  = [b1 | b2 | b3]   (columns)

Torch implementations carry gradients (used by the joint-position loss);
the numpy entry points validate their input and return float64 arrays.
"""

from typing import Sequence, Union

import numpy as np
import torch

from src.core.errors import DegenerateRotation, NotARotation, ShapeMismatch
from src.core.motion import (
    MotionLayout,
    MotionSequence,
    Rotation6D,
    SkeletonSpec,
    ih_channels,
)

_DEGENERATE_EPS = 1e-8
_ORTHO_TOL = 1e-6

RotationInput = Union[Rotation6D, np.ndarray, Sequence[Rotation6D]]


def rot6d_to_matrix_torch(rot6d: torch.Tensor, strict: bool = False) -> torch.Tensor:
    """
    Gram-Schmidt decoding of (..., 6) tensors into (..., 3, 3) rotation matrices.

    Args:
        rot6d: (..., 6) tensor of (a1, a2)
        strict: Raise DegenerateRotation instead of clamping near-zero norms.
                Training passes strict=False so that network outputs always decode.
    """
    a1 = rot6d[..., 0:3]
    a2 = rot6d[..., 3:6]

    n1 = torch.linalg.norm(a1, dim=-1, keepdim=True)
    if strict and bool((n1 <= _DEGENERATE_EPS).any()):
        raise DegenerateRotation(f"first column norm <= {_DEGENERATE_EPS}")
    b1 = a1 / n1.clamp_min(_DEGENERATE_EPS)

    a2_perp = a2 - (a2 * b1).sum(dim=-1, keepdim=True) * b1
    n2 = torch.linalg.norm(a2_perp, dim=-1, keepdim=True)
    if strict and bool((n2 <= _DEGENERATE_EPS).any()):
        raise DegenerateRotation("second column is parallel to the first")
    b2 = a2_perp / n2.clamp_min(_DEGENERATE_EPS)

    b3 = torch.linalg.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def matrix_to_rot6d_torch(matrix: torch.Tensor) -> torch.Tensor:
    """(..., 3, 3) -> (..., 6): first column then second column."""
    return torch.cat([matrix[..., :, 0], matrix[..., :, 1]], dim=-1)


def _as_rot6d_array(rotations: RotationInput) -> np.ndarray:
    if isinstance(rotations, Rotation6D):
        return rotations.values
    if isinstance(rotations, np.ndarray):
        return np.asarray(rotations, dtype=np.float64)
    return np.stack([r.values if isinstance(r, Rotation6D) else np.asarray(r) for r in rotations])


def rot6d_to_matrix(rotation: RotationInput) -> np.ndarray:
    """
    Decode a Rotation6D (or a (..., 6) array) into rotation matrices.

    Examples:
        >>> rot6d_to_matrix(Rotation6D(np.array([0, 1, 0, -1, 0, 0])))
        array([[ 0., -1.,  0.],
               [ 1.,  0.,  0.],
               [ 0.,  0.,  1.]])

    Raises:
        DegenerateRotation: If |a1| <= 1e-8 or a2 is parallel to a1
    """
    values = _as_rot6d_array(rotation)
    if values.shape[-1] != 6:
        raise ShapeMismatch(f"6D rotations need a trailing dimension of 6, got {values.shape}")
    with torch.no_grad():
        matrix = rot6d_to_matrix_torch(torch.from_numpy(values.astype(np.float64)), strict=True)
    return matrix.numpy() + 0.0


def matrix_to_rot6d(matrix: np.ndarray) -> Rotation6D:
    """
    Encode a 3x3 rotation matrix as its first two columns.

    Raises:
        NotARotation: If the matrix is not orthonormal within 1e-6 or has det <= 0
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 3):
        raise ShapeMismatch(f"Expected a 3x3 matrix, got {matrix.shape}")
    check_rotation(matrix)
    return Rotation6D(np.concatenate([matrix[:, 0], matrix[:, 1]]))


def check_rotation(matrix: np.ndarray) -> None:
    """Raise NotARotation unless every (..., 3, 3) matrix is in SO(3) within 1e-6."""
    matrix = np.asarray(matrix, dtype=np.float64)
    gram = np.swapaxes(matrix, -1, -2) @ matrix
    error = np.max(np.abs(gram - np.eye(3)))
    if not np.isfinite(error) or error > _ORTHO_TOL:
        raise NotARotation(f"Matrix is not orthonormal (max |R^T R - I| = {error:.3g})")
    if np.any(np.linalg.det(matrix) <= 0):
        raise NotARotation("Matrix has a non-positive determinant")


def forward_kinematics_torch(
    parents: Sequence[int],
    offsets: torch.Tensor,
    root_translation: torch.Tensor,
    rotations: torch.Tensor,
) -> torch.Tensor:
    """
    Batched forward kinematics.

    Args:
        parents: Parent index per joint (-1 for the root, parents precede children)
        offsets: (J, 3) rest offsets
        root_translation: (..., 3) root positions
        rotations: (..., J, 3, 3) local rotation matrices (joint 0 = root global orientation)

    Returns:
        (..., J, 3) global joint positions
    """
    joint_count = len(parents)
    positions = [root_translation]
    global_rot = [rotations[..., 0, :, :]]
    for j in range(1, joint_count):
        p = parents[j]
        positions.append(positions[p] + global_rot[p] @ offsets[j])
        global_rot.append(global_rot[p] @ rotations[..., j, :, :])
    return torch.stack(positions, dim=-2)


def forward_kinematics(
    skeleton: SkeletonSpec,
    root_translation: np.ndarray,
    rotations: RotationInput,
) -> np.ndarray:
    """
    Global joint positions of one pose.

    Args:
        skeleton: Kinematic tree
        root_translation: 3-vector
        rotations: joint_count Rotation6D values, or a (J, 6) / (J, 3, 3) array

    Returns:
        (J, 3) float64 positions

    Raises:
        ShapeMismatch: If the rotation count differs from the joint count
    """
    if isinstance(rotations, np.ndarray) and rotations.shape[-2:] == (3, 3):
        matrices = np.asarray(rotations, dtype=np.float64)
    else:
        matrices = rot6d_to_matrix(_as_rot6d_array(rotations))

    if matrices.shape != (skeleton.joint_count, 3, 3):
        raise ShapeMismatch(
            f"Expected {skeleton.joint_count} rotations, got array of shape {matrices.shape[:-2]}"
        )
    root = np.asarray(root_translation, dtype=np.float64)
    if root.shape != (3,):
        raise ShapeMismatch(f"root_translation must be a 3-vector, got {root.shape}")

    with torch.no_grad():
        out = forward_kinematics_torch(
            skeleton.parent_index,
            torch.from_numpy(skeleton.rest_offset),
            torch.from_numpy(root),
            torch.from_numpy(matrices),
        )
    return out.numpy()


def joint_positions_torch(
    data: torch.Tensor, layout: MotionLayout, skeleton: SkeletonSpec
) -> torch.Tensor:
    """
    Differentiable joint positions from (..., N, D) feature tensors (unnormalized).
    """
    J = skeleton.joint_count
    if layout is MotionLayout.IH262:
        pos = data[..., ih_channels(J)["positions"]]
        return pos.reshape(*pos.shape[:-1], J, 3)

    rows = data.reshape(*data.shape[:-1], J + 1, 6)
    root_translation = rows[..., 0, 0:3]
    matrices = rot6d_to_matrix_torch(rows[..., 1:, :])
    offsets = torch.as_tensor(skeleton.rest_offset, dtype=data.dtype, device=data.device)
    return forward_kinematics_torch(skeleton.parent_index, offsets, root_translation, matrices)


def joint_positions(seq: MotionSequence, skeleton: SkeletonSpec) -> np.ndarray:
    """
    Per-frame global joint positions, (N, J, 3) float64.

    IH262 returns the stored position channels; IX56x6 runs forward kinematics
    from the root translation in row 0 and the rotation rows.

    Raises:
        ShapeMismatch: If the skeleton does not fit the sequence
        DegenerateRotation: If an IX56x6 rotation row cannot be decoded
    """
    if seq.joint_count != skeleton.joint_count:
        raise ShapeMismatch(
            f"Sequence encodes {seq.joint_count} joints, skeleton has {skeleton.joint_count}"
        )
    data = np.asarray(seq.data, dtype=np.float64)
    if seq.layout is MotionLayout.IX56x6:
        rows = data.reshape(seq.frames, skeleton.joint_count + 1, 6)
        matrices = rot6d_to_matrix(rows[:, 1:, :])
        with torch.no_grad():
            out = forward_kinematics_torch(
                skeleton.parent_index,
                torch.from_numpy(skeleton.rest_offset),
                torch.from_numpy(rows[:, 0, 0:3].copy()),
                torch.from_numpy(matrices),
            )
        return out.numpy()

    with torch.no_grad():
        return joint_positions_torch(torch.from_numpy(data), seq.layout, skeleton).numpy()
