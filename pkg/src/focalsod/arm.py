"""AiF-guided focal-stack refinement and the shared slice-fusion block."""

from __future__ import annotations

import numpy as np

from . import ops
from .layers import BConv, Conv2d, Conv3, Module
from .tensor import ConfigError, DimensionError, Tensor


class FocalFusion(Module):
    """Collapse the slice axis.

    ``sum_max`` concatenates the slice-wise sum and max and fuses them with a
    BConv; ``concat_conv`` stacks all slices on the channel axis instead
    (which ties the layer to a fixed slice count).
    """

    def __init__(self, c: int, rng: np.random.Generator, mode: str = "sum_max", slices: int | None = None):
        super().__init__()
        self.mode = mode
        if mode == "sum_max":
            self.fuse = BConv(2 * c, c, rng)
        elif mode == "concat_conv":
            if not slices:
                raise ConfigError("concat_conv fusion needs a fixed slice count")
            self.slices = slices
            self.fuse = BConv(slices * c, c, rng)
        else:
            raise ConfigError(f"unknown fusion mode {mode!r}")

    def pre_fusion(self, f: Tensor) -> Tensor:
        if f.shape[0] < 1:
            raise DimensionError("focal fusion over zero slices")
        if self.mode == "sum_max":
            return ops.concat_channels(ops.slice_sum(f), ops.slice_max(f))
        if f.shape[0] != self.slices:
            raise DimensionError(f"concat_conv fusion built for {self.slices} slices, got {f.shape[0]}")
        return ops.slices_to_channels(f)

    def forward(self, f: Tensor) -> Tensor:
        return self.fuse(self.pre_fusion(f))


def alignment_ratio(w_a: Tensor, w_fs: Tensor, eps: float = ops.DIV_EPS) -> Tensor:
    """Dice-style per-slice, per-channel agreement ``GAP(a*f) / (GAP(a+f) + eps)``.

    ``w_a`` is a single slice broadcast across the ``N`` slices of ``w_fs``.
    """
    return ops.div_eps(ops.gap(ops.mul(w_fs, w_a)), ops.gap(ops.add(w_fs, w_a)), eps)


class ARM(Module):
    def __init__(self, c: int, rng: np.random.Generator, ff_mode: str = "sum_max", slices: int | None = None,
                 mask_mode: str = "per_channel", eps: float = ops.DIV_EPS):
        super().__init__()
        self.eps = eps
        self.align_fs = BConv(c, c, rng)
        self.align_guide = BConv(c, c, rng)
        self.score = Conv2d(c, 1, 1, rng)
        self.mask = Conv3(c, c if mask_mode == "per_channel" else 1, rng)
        self.ff = FocalFusion(c, rng, ff_mode, slices)

    def _check(self, f_a: Tensor, f_fs: Tensor) -> None:
        if f_fs.shape[0] == 0:
            raise DimensionError("ARM needs at least one focal slice")
        if f_a.shape[0] != 1 or f_a.shape[1:] != f_fs.shape[1:]:
            raise DimensionError(f"ARM guide {f_a.shape} does not match focal features {f_fs.shape}")

    def alignment_weights(self, f_a: Tensor, f_fs: Tensor) -> Tensor:
        """Per-slice softmax weights, shape ``(N, 1, 1, 1)``."""
        self._check(f_a, f_fs)
        ratio = alignment_ratio(self.align_guide(f_a), self.align_fs(f_fs), self.eps)
        return ops.softmax_slices(self.score(ratio))

    def mask_refine(self, f_a: Tensor, f_fs1: Tensor) -> Tensor:
        """``f + f * sigmoid(Conv3(f * guide))``; the guide may be one broadcast slice."""
        mask = ops.sigmoid(self.mask(ops.mul(f_fs1, f_a)))
        return ops.add(f_fs1, ops.mul(f_fs1, mask))

    def forward(self, f_a: Tensor, f_fs: Tensor) -> Tensor:
        v = self.alignment_weights(f_a, f_fs)
        weighted = ops.mul(f_fs, v)
        return self.ff(self.mask_refine(f_a, weighted))


def focal_fusion(ff: FocalFusion, f: Tensor) -> Tensor:
    return ff(f)


def arm_forward(arm: ARM, f_a: Tensor, f_fs: Tensor) -> Tensor:
    return arm(f_a, f_fs)
