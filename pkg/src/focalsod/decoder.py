"""UNet-style top-down decoder producing the four saliency maps."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import ops
from .layers import BConv, Module, ModuleList, PredictionHead
from .tensor import DimensionError, Tensor


class Decoder(Module):
    def __init__(self, c: int, rng: np.random.Generator):
        super().__init__()
        # fuse[0] merges hierarchy 4, fuse[1] hierarchy 3, fuse[2] hierarchy 2
        self.fuse = ModuleList([BConv(2 * c, c, rng) for _ in range(3)])
        self.heads = ModuleList([PredictionHead(c, rng) for _ in range(4)])

    def features(self, feats: Sequence[Tensor]) -> list:
        """Top-down fused maps ``[D2, D3, D4, D5]``."""
        if len(feats) != 4:
            raise DimensionError(f"decoder expects 4 hierarchy features, got {len(feats)}")
        for lo, hi in zip(feats[:-1], feats[1:]):
            if lo.shape[2] != 2 * hi.shape[2] or lo.shape[3] != 2 * hi.shape[3]:
                raise DimensionError(f"non-dyadic hierarchy sizes {lo.shape} / {hi.shape}")
        d = feats[3]
        fused = [d]
        for k, f in enumerate(reversed(feats[:3])):
            up = ops.resize_bilinear(d, f.shape[2], f.shape[3])
            d = self.fuse[k](ops.concat_channels(f, up))
            fused.append(d)
        return fused[::-1]

    def forward(self, feats: Sequence[Tensor], out_h: int, out_w: int) -> list:
        """Saliency maps ``[S2, S3, S4, S5]`` at ``out_h x out_w``; S2 is the final output."""
        return [head(d, out_h, out_w) for head, d in zip(self.heads, self.features(feats))]


def decode_topdown(decoder: Decoder, feats: Sequence[Tensor], out_h: int, out_w: int) -> list:
    return decoder(feats, out_h, out_w)
