"""Versioned weight files: a format tag, a kind tag, and named tensors."""

from __future__ import annotations

from pathlib import Path

import torch
from torch import nn

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_weights(module: nn.Module, path: str | Path, kind: str, extra: dict | None = None) -> None:
    blob = {"format_version": FORMAT_VERSION, "kind": kind,
            "state_dict": module.state_dict()}
    if extra:
        blob.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(blob, path)


def load_weights(module: nn.Module, path: str | Path, kind: str) -> dict:
    """Load a checkpoint into ``module``; returns the raw blob for extras."""
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    if blob.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('format_version')!r} in {path}")
    if blob.get("kind") != kind:
        raise CheckpointError(f"checkpoint {path} holds {blob.get('kind')!r} weights, expected {kind!r}")
    module.load_state_dict(blob["state_dict"])
    return blob
