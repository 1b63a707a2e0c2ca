"""VGG-19-shaped encoder streams with compressed side outputs."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import ops
from .config import EncoderConfig
from .layers import BConv, Compression, Module, ModuleList
from .tensor import ConfigError, DimensionError, Tensor

HIERARCHIES = (2, 3, 4, 5)


class EncoderStream(Module):
    """Five conv stages; stage ``i`` runs at ``input / 2**(i-1)``.

    Side outputs of hierarchies 2..5 pass through a 1x1 compression block to
    the unified width.  Hierarchy-1 features feed stage 2 but are not emitted.
    """

    def __init__(self, cfg: EncoderConfig, unified: int, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.input_size = cfg.input_size
        self.in_channels = cfg.in_channels
        stages = []
        c_prev = cfg.in_channels
        for width, n_convs in zip(cfg.widths, cfg.convs):
            layers = []
            for _ in range(n_convs):
                layers.append(BConv(c_prev, width, rng))
                c_prev = width
            stages.append(ModuleList(layers))
        self.stages = ModuleList(stages)
        self.compress = ModuleList([Compression(w, unified, rng) for w in cfg.widths[1:]])

    def forward(self, x: Tensor) -> list:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(f"encoder expects (n,{self.in_channels},H,W), got {x.shape}")
        h, w = x.shape[2:]
        if h % 16 or w % 16:
            raise ConfigError(f"input resolution {h}x{w} is not divisible by 16")
        side = []
        for s, stage in enumerate(self.stages):
            if s:
                x = ops.maxpool2x2(x)
            for layer in stage:
                x = layer(x)
            if s:
                side.append(self.compress[s - 1](x))
        return side


def encode_stream(stream: EncoderStream, x: Tensor) -> list:
    return stream(x)


def encode_focal_stack(stream: EncoderStream, slices: Sequence[Tensor], max_slices: int | None = None) -> list:
    """Stack ``(1,3,H,W)`` slices along the slice axis and encode with shared weights."""
    slices = list(slices)
    if not slices:
        raise ValueError("focal stack is empty")
    if max_slices is not None and len(slices) > max_slices:
        raise ConfigError(f"{len(slices)} slices exceeds the configured maximum {max_slices}")
    return stream(ops.concat(slices, axis=0))


def depth_to_rgb(depth: Tensor) -> Tensor:
    """Replicate a one-channel depth map to three channels."""
    return ops.concat([depth, depth, depth], axis=1)
