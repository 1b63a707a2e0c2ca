"""Depth-guided refinement through two-modality coordinate attention."""

from __future__ import annotations

import numpy as np

from . import ops
from .arm import FocalFusion
from .layers import BConv, Conv2d, Module
from .tensor import DimensionError, Tensor


class DRM(Module):
    """Row/column attention masks from pooled guide and focal features.

    Pipeline: pool both streams along width (X) and height (Y), fuse each
    pair with a 1x1 conv, join X and Y along one spatial axis for a shared
    1x1 BConv, split, and map each half to a sigmoid mask with a 1x1 conv.
    The focal slices are scaled by both masks and fused.
    """

    def __init__(self, c: int, rng: np.random.Generator, ff_mode: str = "sum_max", slices: int | None = None,
                 hidden: int | None = None):
        super().__init__()
        hid = hidden or c
        self.fuse_x = Conv2d(2 * c, hid, 1, rng)
        self.fuse_y = Conv2d(2 * c, hid, 1, rng)
        self.joint = BConv(hid, hid, rng, k=1)
        self.score_x = Conv2d(hid, c, 1, rng)
        self.score_y = Conv2d(hid, c, 1, rng)
        self.ff = FocalFusion(c, rng, ff_mode, slices)

    def directional_masks(self, f_d: Tensor, f_fs: Tensor) -> tuple:
        if f_d.shape[0] != 1 or f_d.shape[1:] != f_fs.shape[1:]:
            raise DimensionError(f"DRM guide {f_d.shape} does not match focal features {f_fs.shape}")
        n, _, h, w = f_fs.shape
        x_d = ops.repeat_slices(ops.xpool(f_d), n)
        y_d = ops.repeat_slices(ops.ypool(f_d), n)
        x = self.fuse_x(ops.concat_channels(ops.xpool(f_fs), x_d))
        y = self.fuse_y(ops.concat_channels(ops.ypool(f_fs), y_d))
        joint = self.joint(ops.concat_spatial(x, y))
        xs, ys = ops.split_spatial(joint, h, w)
        return ops.sigmoid(self.score_x(xs)), ops.sigmoid(self.score_y(ys))

    def modulate(self, f_d: Tensor, f_fs: Tensor) -> Tensor:
        mx, my = self.directional_masks(f_d, f_fs)
        return ops.mul(ops.mul(f_fs, mx), my)

    def forward(self, f_d: Tensor, f_fs: Tensor) -> Tensor:
        return self.ff(self.modulate(f_d, f_fs))


def drm_forward(drm: DRM, f_d: Tensor, f_fs: Tensor) -> Tensor:
    return drm(f_d, f_fs)
