"""Siamese Small-VGG shape stream.

A single Small-VGG instance embeds both 64x64 vehicle patches of a pair
(one module, therefore exactly shared weights), and the shape descriptor
is the componentwise absolute difference of the two embeddings.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .ingest import SHAPE_SIZE, ShapePatch

EMBEDDING_DIM = 2048  # flattened 2x2x512 final feature map

_CHANNELS = (64, 128, 128, 256, 512)


class SmallVgg(nn.Module):
    """Five conv3x3+ReLU blocks, each followed by 2x2/2 max-pooling."""

    def __init__(self):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 3
        for out_ch in _CHANNELS:
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=1, padding=1))
            layers.append(nn.ReLU(inplace=True))
            layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
            in_ch = out_ch
        self.features = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1:] != (3, SHAPE_SIZE, SHAPE_SIZE):
            raise ValueError(f"expected Nx3x{SHAPE_SIZE}x{SHAPE_SIZE} input, got {tuple(x.shape)}")
        return self.features(x)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward(x).flatten(start_dim=1)


def reinit_uniform_fanin_(module: nn.Module, seed: int) -> None:
    """Re-draw all conv/linear parameters as U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
        elif isinstance(m, nn.Linear):
            fan_in = m.in_features
        else:
            continue
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            m.weight.uniform_(-bound, bound, generator=gen)
            if m.bias is not None:
                m.bias.uniform_(-bound, bound, generator=gen)


def build_small_vgg(seed: int | None = None) -> SmallVgg:
    net = SmallVgg()
    if seed is not None:
        reinit_uniform_fanin_(net, seed)
    return net


def patch_to_tensor(patch: ShapePatch | np.ndarray) -> torch.Tensor:
    """HxWxC float patch -> 1xCxHxW tensor."""
    pixels = patch.pixels if isinstance(patch, ShapePatch) else patch
    return torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1)))[None]


def patches_to_tensor(patches: list[ShapePatch | np.ndarray]) -> torch.Tensor:
    return torch.cat([patch_to_tensor(p) for p in patches], dim=0)


def embed(patch: ShapePatch | np.ndarray, net: SmallVgg) -> np.ndarray:
    """Embedding of one patch: the flattened final feature map (length 2048)."""
    net.eval()
    with torch.inference_mode():
        out = net.embed(patch_to_tensor(patch))
    return out[0].numpy()


def shape_descriptor(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Componentwise L1 distance of two embeddings."""
    e1 = np.asarray(e1)
    e2 = np.asarray(e2)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding length mismatch: {e1.shape} vs {e2.shape}")
    return np.abs(e1 - e2)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def layer_trace(module: nn.Sequential, input_whc: tuple[int, int, int]) -> list[dict]:
    """Forward-shape trace of a conv/pool stack, one row per conv or pool layer.

    Shapes are reported width x height x channels to match the usual
    architecture-table convention. ReLU layers are folded into their conv.
    """
    w, h, c = input_whc
    x = torch.zeros(1, c, h, w)
    rows = []
    for layer in module:
        if isinstance(layer, nn.ReLU):
            x = layer(x)
            continue
        in_shape = (x.shape[3], x.shape[2], x.shape[1])
        x = layer(x)
        out_shape = (x.shape[3], x.shape[2], x.shape[1])
        if isinstance(layer, nn.Conv2d):
            rows.append({"layer": "conv", "filters": layer.out_channels,
                         "size": f"{layer.kernel_size[0]}x{layer.kernel_size[1]}/{layer.stride[0]}",
                         "input": in_shape, "output": out_shape})
        elif isinstance(layer, nn.MaxPool2d):
            rows.append({"layer": "max", "filters": None,
                         "size": f"{layer.kernel_size}x{layer.kernel_size}/{layer.stride}",
                         "input": in_shape, "output": out_shape})
        else:
            rows.append({"layer": type(layer).__name__.lower(), "filters": None,
                         "size": "", "input": in_shape, "output": out_shape})
    return rows
