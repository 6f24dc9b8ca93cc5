"""
Model checkpoints in the binary container.

A checkpoint header echoes the run configuration, the checkpoint kind and any
extras (normalization stats, token scale, skeleton name); the payload holds
every state-dict tensor by name. Loading checks names and shapes and never
reshapes silently.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from src.core.container import read_container, write_container
from src.core.errors import CheckpointMismatch

logger = logging.getLogger(__name__)

VAE_KIND = "dhvae_checkpoint"
DENOISER_KIND = "denoiser_checkpoint"


def save_checkpoint(
    path: Path,
    model: nn.Module,
    kind: str,
    config: Dict,
    extras: Optional[Dict] = None,
) -> None:
    """
    Write a model's state dict with its config echo.

    Args:
        path: Output file
        model: Module whose state_dict is stored (as little-endian float32)
        kind: VAE_KIND or DENOISER_KIND
        config: JSON-serializable run configuration
        extras: JSON-serializable extras (stats, token scale, ...)
    """
    arrays = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    header = {"kind": kind, "config": config, "extras": extras or {}}
    write_container(path, header, arrays)
    logger.info("Saved %s (%d tensors) to %s", kind, len(arrays), path)


def read_checkpoint(path: Path, kind: str) -> Tuple[Dict, Dict[str, np.ndarray]]:
    """
    Read a checkpoint's header and arrays.

    Raises:
        CheckpointMismatch: If the file holds another kind of checkpoint
    """
    header, arrays = read_container(path)
    if header.get("kind") != kind:
        raise CheckpointMismatch(f"{path}: expected {kind}, found {header.get('kind')}")
    return header, arrays


def load_state(model: nn.Module, arrays: Dict[str, np.ndarray], source: str = "checkpoint") -> None:
    """
    Copy arrays into a model's state dict.

    Raises:
        CheckpointMismatch: On missing, unexpected or differently shaped tensors
    """
    expected = model.state_dict()
    missing = sorted(set(expected) - set(arrays))
    unexpected = sorted(set(arrays) - set(expected))
    if missing or unexpected:
        raise CheckpointMismatch(
            f"{source}: missing tensors {missing[:5]}, unexpected tensors {unexpected[:5]}"
        )

    state = {}
    for name, reference in expected.items():
        array = arrays[name]
        if tuple(array.shape) != tuple(reference.shape):
            raise CheckpointMismatch(
                f"{source}: tensor '{name}' has shape {tuple(array.shape)}, "
                f"model expects {tuple(reference.shape)}"
            )
        state[name] = torch.from_numpy(np.array(array)).to(dtype=reference.dtype)
    model.load_state_dict(state)
