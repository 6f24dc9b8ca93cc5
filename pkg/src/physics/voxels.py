"""
Capsule body volumes and their voxelization on a shared global lattice.

Voxel (i, j, k) has its centre at (i, j, k) * resolution, so every body
voxelized at the same resolution lands on the same lattice. A voxel is
occupied when its centre lies within a capsule (distance to the bone segment
<= radius, with a 1e-9 m tolerance).
"""

from dataclasses import dataclass
from typing import Optional, Set, Tuple

import numpy as np
from scipy import ndimage

from src.core.errors import LatticeMismatch, ShapeMismatch
from src.core.motion import SkeletonSpec

DEFAULT_RESOLUTION = 0.02
INCLUSION_TOL = 1e-9

_KEY_SPAN = 1 << 20
_KEY_OFFSET = 1 << 19

# 6-neighbourhood
NEIGHBOURHOOD = ndimage.generate_binary_structure(3, 1)


@dataclass
class BodyVolume:
    """
    One capsule per bone, realized per frame.

    Attributes:
        starts: (F, C, 3) capsule start points
        ends: (F, C, 3) capsule end points
        radii: (C,) capsule radii in metres
    """
    starts: np.ndarray
    ends: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=np.float64)
        self.ends = np.asarray(self.ends, dtype=np.float64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        if self.starts.ndim != 3 or self.starts.shape != self.ends.shape or self.starts.shape[-1] != 3:
            raise ShapeMismatch(
                f"starts {self.starts.shape} and ends {self.ends.shape} must both be (F, C, 3)"
            )
        if self.radii.shape != (self.starts.shape[1],):
            raise ShapeMismatch(f"Expected {self.starts.shape[1]} radii, got {self.radii.shape}")
        if np.any(self.radii < 0):
            raise ValueError("Capsule radii must be non-negative")
        if not (np.all(np.isfinite(self.starts)) and np.all(np.isfinite(self.ends))):
            raise ValueError("Capsule endpoints must be finite")

    @property
    def frames(self) -> int:
        return self.starts.shape[0]

    @property
    def capsule_count(self) -> int:
        return self.starts.shape[1]

    @classmethod
    def from_joints(cls, skeleton: SkeletonSpec, joints: np.ndarray) -> "BodyVolume":
        """
        Capsules along the skeleton's bones from (F, J, 3) joint positions.
        """
        bones = skeleton.bones()
        parents = [p for p, _, _ in bones]
        children = [c for _, c, _ in bones]
        return cls(
            starts=joints[:, parents],
            ends=joints[:, children],
            radii=np.array([r for _, _, r in bones]),
        )

    def translated(self, shift: np.ndarray) -> "BodyVolume":
        return BodyVolume(self.starts + shift, self.ends + shift, self.radii)

    def bounds(self, frame: int) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Axis-aligned (lo, hi) box of a frame, or None for an empty body."""
        if self.capsule_count == 0:
            return None
        r = self.radii[:, None]
        lo = np.minimum(self.starts[frame], self.ends[frame]) - r
        hi = np.maximum(self.starts[frame], self.ends[frame]) + r
        return lo.min(axis=0), hi.max(axis=0)

    def __repr__(self) -> str:
        return f"BodyVolume(frames={self.frames}, capsules={self.capsule_count})"


def encode_keys(indices: np.ndarray) -> np.ndarray:
    """(M, 3) integer indices -> (M,) int64 keys."""
    idx = np.asarray(indices, dtype=np.int64) + _KEY_OFFSET
    return (idx[:, 0] * _KEY_SPAN + idx[:, 1]) * _KEY_SPAN + idx[:, 2]


def decode_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    k = keys % _KEY_SPAN
    j = (keys // _KEY_SPAN) % _KEY_SPAN
    i = keys // (_KEY_SPAN * _KEY_SPAN)
    return np.stack([i, j, k], axis=-1) - _KEY_OFFSET


@dataclass
class VoxelGrid:
    """
    Sparse occupancy on the lattice {index * resolution + origin}.

    Attributes:
        resolution: Voxel pitch in metres
        keys: Sorted unique int64 keys of the occupied voxels
        origin: Lattice origin (the global lattice uses the zero vector)
    """
    resolution: float
    keys: np.ndarray
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        self.keys = np.unique(np.asarray(self.keys, dtype=np.int64))

    @classmethod
    def from_indices(cls, indices: np.ndarray, resolution: float = DEFAULT_RESOLUTION) -> "VoxelGrid":
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        return cls(resolution=resolution, keys=encode_keys(indices))

    @property
    def indices(self) -> np.ndarray:
        return decode_keys(self.keys)

    @property
    def occupancy(self) -> Set[Tuple[int, int, int]]:
        return {tuple(int(v) for v in row) for row in self.indices}

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    def same_lattice(self, other: "VoxelGrid") -> bool:
        return self.resolution == other.resolution and tuple(self.origin) == tuple(other.origin)

    def __repr__(self) -> str:
        return f"VoxelGrid(resolution={self.resolution}, occupied={len(self)})"


def _segment_distance_sq(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distance from (M, 3) points to the segment a-b."""
    abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    dx = points[:, 0] - a[0]
    dy = points[:, 1] - a[1]
    dz = points[:, 2] - a[2]
    length_sq = abx * abx + aby * aby + abz * abz
    if length_sq > 0.0:
        t = np.clip((dx * abx + dy * aby + dz * abz) / length_sq, 0.0, 1.0)
    else:
        t = np.zeros_like(dx)
    ex = dx - t * abx
    ey = dy - t * aby
    ez = dz - t * abz
    return ex * ex + ey * ey + ez * ez


def index_range(lo: np.ndarray, hi: np.ndarray, resolution: float) -> Tuple[np.ndarray, np.ndarray]:
    return np.floor(lo / resolution).astype(np.int64) - 1, np.ceil(hi / resolution).astype(np.int64) + 1


def _capsule_mask(
    start: np.ndarray, end: np.ndarray, radius: float, box_lo: np.ndarray, shape: Tuple[int, int, int],
    resolution: float,
) -> Tuple[Tuple[slice, slice, slice], np.ndarray]:
    """
    Occupancy of one capsule restricted to a dense box starting at index box_lo.

    Returns the sub-box slices and the boolean mask inside them.
    """
    lo, hi = index_range(np.minimum(start, end) - radius, np.maximum(start, end) + radius, resolution)
    lo = np.maximum(lo, box_lo)
    hi = np.minimum(hi, box_lo + np.asarray(shape) - 1)
    if np.any(hi < lo):
        return (slice(0, 0),) * 3, np.zeros((0, 0, 0), dtype=bool)

    axes = [np.arange(lo[d], hi[d] + 1) for d in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    centres = grid.reshape(-1, 3) * resolution
    limit = (radius + INCLUSION_TOL) ** 2
    inside = (_segment_distance_sq(centres, start, end) <= limit).reshape(grid.shape[:3])
    offset = lo - box_lo
    slices = tuple(slice(offset[d], offset[d] + inside.shape[d]) for d in range(3))
    return slices, inside


def rasterize(
    body: BodyVolume, frame: int, box_lo: np.ndarray, shape: Tuple[int, int, int], resolution: float
) -> np.ndarray:
    """
    Dense boolean occupancy of a body frame over the index box [box_lo, box_lo + shape).
    """
    dense = np.zeros(shape, dtype=bool)
    for c in range(body.capsule_count):
        slices, mask = _capsule_mask(
            body.starts[frame, c], body.ends[frame, c], float(body.radii[c]), box_lo, shape, resolution
        )
        if mask.size:
            dense[slices] |= mask
    return dense


def voxelize(body: BodyVolume, frame: int, resolution: float = DEFAULT_RESOLUTION) -> VoxelGrid:
    """
    Occupied voxels of one body frame on the global lattice.

    Examples:
        >>> seg = BodyVolume(np.zeros((1, 1, 3)), np.array([[[1.0, 0, 0]]]), np.array([0.0]))
        >>> len(voxelize(seg, 0))
        51
    """
    bounds = body.bounds(frame)
    if bounds is None:
        return VoxelGrid(resolution=resolution, keys=np.zeros(0, dtype=np.int64))
    lo, hi = index_range(bounds[0], bounds[1], resolution)
    shape = tuple(int(v) for v in hi - lo + 1)
    dense = rasterize(body, frame, lo, shape, resolution)
    indices = np.argwhere(dense) + lo
    return VoxelGrid(resolution=resolution, keys=encode_keys(indices))


def voxel_overlap(a: VoxelGrid, b: VoxelGrid) -> int:
    """
    Number of voxels occupied in both grids.

    Raises:
        LatticeMismatch: If the grids use different resolutions or origins
    """
    if not a.same_lattice(b):
        raise LatticeMismatch(
            f"Grids differ: resolution {a.resolution} vs {b.resolution}, origin {a.origin} vs {b.origin}"
        )
    return int(np.intersect1d(a.keys, b.keys, assume_unique=True).shape[0])


def dilate(grid: VoxelGrid, iterations: int = 1) -> VoxelGrid:
    """
    Morphological dilation with the 6-neighbourhood, repeated iterations times.
    """
    if iterations <= 0 or len(grid) == 0:
        return grid
    indices = grid.indices
    lo = indices.min(axis=0) - iterations
    shape = tuple(int(v) for v in indices.max(axis=0) + iterations - lo + 1)
    dense = np.zeros(shape, dtype=bool)
    dense[tuple((indices - lo).T)] = True
    grown = ndimage.binary_dilation(dense, structure=NEIGHBOURHOOD, iterations=iterations)
    return VoxelGrid(resolution=grid.resolution, keys=encode_keys(np.argwhere(grown) + lo), origin=grid.origin)
