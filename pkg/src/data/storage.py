"""
Dataset files: interaction pairs in the binary container.

The header records the layout, the skeleton name and content hash, and per-clip
text/contact/frame-count entries; the payload holds each clip's two (N, D)
float32 arrays in clip order.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from src.core.container import read_container, read_header, write_container
from src.core.errors import FormatVersionMismatch, LayoutMismatch
from src.core.motion import InteractionPair, MotionLayout, MotionSequence, SkeletonSpec

logger = logging.getLogger(__name__)

DATASET_KIND = "interaction_dataset"


@dataclass
class DatasetFile:
    """
    Contents of a dataset file.

    Attributes:
        pairs: The interaction clips
        layout: Feature layout (None only for an empty file written without one)
        skeleton_name: Name of the skeleton the clips were produced for
        skeleton_hash: SHA-256 of that skeleton's canonical JSON ("" if unknown)
        metadata: Free-form JSON metadata (seed, cfg scale, ...)
    """
    pairs: List[InteractionPair]
    layout: Optional[MotionLayout]
    skeleton_name: str = ""
    skeleton_hash: str = ""
    metadata: Dict = field(default_factory=dict)

    def __repr__(self) -> str:
        layout = self.layout.value if self.layout else None
        return f"DatasetFile(clips={len(self.pairs)}, layout={layout}, skeleton='{self.skeleton_name}')"


def save_dataset(
    path: Path,
    pairs: List[InteractionPair],
    skeleton: Optional[SkeletonSpec] = None,
    layout: Optional[MotionLayout] = None,
    metadata: Optional[Dict] = None,
) -> None:
    """
    Write clips to a dataset file.

    Raises:
        LayoutMismatch: If the clips mix layouts
        DatasetIOError: If the file cannot be written
    """
    layouts = {p.layout for p in pairs}
    if layout is not None:
        layouts.add(layout)
    if len(layouts) > 1:
        raise LayoutMismatch(f"Dataset mixes layouts: {sorted(lt.value for lt in layouts)}")
    resolved = next(iter(layouts)) if layouts else None

    header = {
        "kind": DATASET_KIND,
        "layout": resolved.value if resolved else None,
        "skeleton_name": skeleton.name if skeleton else "",
        "skeleton_hash": skeleton.content_hash() if skeleton else "",
        "clips": [
            {"text": p.text, "contact_annotated": p.contact_annotated, "frames": p.frames}
            for p in pairs
        ],
        "metadata": metadata or {},
    }
    arrays = {}
    for i, pair in enumerate(pairs):
        arrays[f"clip{i:06d}/a"] = pair.person_a.data
        arrays[f"clip{i:06d}/b"] = pair.person_b.data

    write_container(path, header, arrays)
    logger.info("Wrote %d clips to %s", len(pairs), path)


def load_dataset_file(path: Path) -> DatasetFile:
    """
    Read a dataset file with its header information.

    Raises:
        DatasetIOError: If the file cannot be read
        FormatVersionMismatch: If the file is truncated, corrupt or not a dataset, or
                              holds clips without a known layout
    """
    header, arrays = read_container(path)
    if header.get("kind") != DATASET_KIND:
        raise FormatVersionMismatch(f"{path}: not a dataset file (kind={header.get('kind')})")

    clips = header.get("clips", [])
    try:
        layout = MotionLayout(header["layout"]) if header.get("layout") else None
    except ValueError:
        raise FormatVersionMismatch(f"{path}: unknown layout {header['layout']!r}") from None
    if clips and layout is None:
        raise FormatVersionMismatch(f"{path}: {len(clips)} clips but no layout recorded")

    pairs = []
    for i, clip in enumerate(clips):
        a = arrays.get(f"clip{i:06d}/a")
        b = arrays.get(f"clip{i:06d}/b")
        if a is None or b is None:
            raise FormatVersionMismatch(f"{path}: clip {i} arrays missing")
        pairs.append(
            InteractionPair(
                person_a=MotionSequence(layout=layout, data=a),
                person_b=MotionSequence(layout=layout, data=b),
                text=clip["text"],
                contact_annotated=bool(clip["contact_annotated"]),
            )
        )

    return DatasetFile(
        pairs=pairs,
        layout=layout,
        skeleton_name=header.get("skeleton_name", ""),
        skeleton_hash=header.get("skeleton_hash", ""),
        metadata=header.get("metadata", {}),
    )


def load_dataset(path: Path) -> List[InteractionPair]:
    """Read the clips of a dataset file."""
    return load_dataset_file(path).pairs


def dataset_metadata(path: Path) -> Dict:
    """Header metadata without decoding the payload."""
    return read_header(path).get("metadata", {})


def check_compatible(a: DatasetFile, b: DatasetFile) -> None:
    """
    Raise LayoutMismatch unless two files share layout and (when recorded) skeleton.
    """
    if a.layout is not None and b.layout is not None and a.layout is not b.layout:
        raise LayoutMismatch(f"Layouts differ: {a.layout.value} vs {b.layout.value}")
    if a.skeleton_hash and b.skeleton_hash and a.skeleton_hash != b.skeleton_hash:
        raise LayoutMismatch(
            f"Skeletons differ: '{a.skeleton_name}' vs '{b.skeleton_name}'"
        )
    if a.pairs and b.pairs and a.pairs[0].person_a.dim != b.pairs[0].person_a.dim:
        raise LayoutMismatch(
            f"Feature dims differ: {a.pairs[0].person_a.dim} vs {b.pairs[0].person_a.dim}"
        )
