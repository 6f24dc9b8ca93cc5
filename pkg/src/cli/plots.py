"""
Matplotlib figures for sampled motion, training curves and guidance sweeps.

Everything renders with the Agg backend to PNG files.
"""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.colors import to_rgba  # noqa: E402
import numpy as np  # noqa: E402

from src.core.motion import InteractionPair, SkeletonSpec  # noqa: E402
from src.motion.kinematics import joint_positions  # noqa: E402

logger = logging.getLogger(__name__)

PERSON_COLOURS = ("tab:blue", "tab:orange")


def _draw_skeleton(ax, positions: np.ndarray, skeleton: SkeletonSpec, colour: str) -> None:
    for parent, child, _ in skeleton.bones():
        segment = positions[[parent, child]]
        ax.plot(segment[:, 0], segment[:, 1], color=colour, linewidth=1.5)
    ax.scatter(positions[:, 0], positions[:, 1], s=6, color=colour)


def plot_interaction(pair: InteractionPair, skeleton: SkeletonSpec, path: Path) -> Path:
    """
    Two panels: top-down root trajectories and a side view of three key frames.
    """
    people = [joint_positions(seq, skeleton) for seq in (pair.person_a, pair.person_b)]
    fig, (top, side) = plt.subplots(1, 2, figsize=(10, 4))

    for label, positions, colour in zip("ab", people, PERSON_COLOURS):
        root = positions[:, 0]
        top.plot(root[:, 0], root[:, 2], color=colour, label=f"person {label}")
        top.scatter(root[0, 0], root[0, 2], color=colour, marker="o")
        top.scatter(root[-1, 0], root[-1, 2], color=colour, marker="x")
    top.set_xlabel("x (m)")
    top.set_ylabel("z (m)")
    top.set_aspect("equal", adjustable="datalim")
    top.legend(loc="best")
    top.set_title("root trajectories")

    frames = pair.frames
    for alpha, frame in zip((0.3, 0.6, 1.0), (0, frames // 2, frames - 1)):
        for positions, colour in zip(people, PERSON_COLOURS):
            _draw_skeleton(side, positions[frame], skeleton, to_rgba(colour, alpha))
    side.set_xlabel("x (m)")
    side.set_ylabel("y (m)")
    side.set_aspect("equal", adjustable="datalim")
    side.set_title("first / middle / last frame")

    fig.suptitle(pair.text, fontsize=9)
    return _save(fig, path)


def plot_history(epochs: Sequence[Mapping[str, float]], path: Path, keys: Optional[List[str]] = None) -> Path:
    """Per-epoch loss curves, log scale where every value is positive."""
    if keys is None:
        keys = [k for k in epochs[0] if k != "epoch"] if epochs else []
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row["epoch"] for row in epochs]
    positive = True
    for key in keys:
        ys = [row[key] for row in epochs]
        positive &= all(y > 0 for y in ys)
        ax.plot(xs, ys, label=key)
    if positive and keys:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.legend(loc="best", fontsize=7)
    return _save(fig, path)


def sweep_series(rows: Sequence[Mapping]) -> Dict[str, List[tuple]]:
    """
    Metric name -> [(cfg_scale, value), ...] sorted by scale, skipping missing values.

    R-precision lists are split into top1, top2 and top3.
    """
    series: Dict[str, List[tuple]] = {}
    for row in rows:
        scale = float(row["cfg_scale"])
        for key, value in row.items():
            if key == "cfg_scale" or value is None:
                continue
            if isinstance(value, (list, tuple)):
                for k, v in enumerate(value, start=1):
                    series.setdefault(f"{key}_top{k}", []).append((scale, float(v)))
            elif isinstance(value, (int, float)):
                series.setdefault(key, []).append((scale, float(value)))
    return {k: sorted(v) for k, v in series.items()}


def plot_metric_sweep(rows: Sequence[Mapping], path: Path) -> Dict[str, List[tuple]]:
    """
    One panel per metric against the guidance scale.

    Returns:
        The plotted series
    """
    series = sweep_series(rows)
    if not series:
        raise ValueError("No numeric metrics to plot")
    columns = min(3, len(series))
    rows_count = int(np.ceil(len(series) / columns))
    fig, axes = plt.subplots(rows_count, columns, figsize=(4 * columns, 3 * rows_count), squeeze=False)
    for ax, (name, points) in zip(axes.flat, series.items()):
        xs, ys = zip(*points)
        ax.plot(xs, ys, marker="o")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("guidance scale")
    for ax in list(axes.flat)[len(series):]:
        ax.axis("off")
    _save(fig, path)
    return series


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    logger.info("Wrote %s", path)
    return path
