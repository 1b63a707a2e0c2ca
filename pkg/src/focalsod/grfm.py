"""Per-hierarchy refinement and fusion block with ablation wiring."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import ops
from .arm import ARM, FocalFusion
from .config import VariantConfig
from .drm import DRM
from .layers import BConv, ChannelAttention, Module
from .tensor import Tensor


def make_refiner(kind: str, c: int, rng: np.random.Generator, variant: VariantConfig, slices: int,
                 eps: float, drm_hidden: Optional[int] = None) -> Module:
    if kind == "arm":
        return ARM(c, rng, variant.ff_mode, slices, variant.mask_mode, eps)
    if kind == "drm":
        return DRM(c, rng, variant.ff_mode, slices, drm_hidden)
    return FocalFusion(c, rng, variant.ff_mode, slices)


def _refine(refiner: Module, guide: Optional[Tensor], f_fs: Tensor) -> Tensor:
    if isinstance(refiner, FocalFusion):
        return refiner(f_fs)
    return refiner(guide, f_fs)


class GRFM(Module):
    """Guided refinement of the focal stack followed by multi-modal aggregation.

    The AiF path refines one focal branch using the (channel-attended) AiF
    features as guide, the depth path another using depth; each path uses
    ARM, DRM or plain slice fusion per the variant.  With both paths the
    results are cross-fused and then aggregated with the guides.
    """

    def __init__(self, c: int, variant: VariantConfig, slices: int, rng: np.random.Generator,
                 ca_reduction: int = 16, eps: float = ops.DIV_EPS, drm_hidden: Optional[int] = None):
        super().__init__()
        variant.validate()
        self.variant = variant
        if variant.use_aif:
            self.ca_aif = ChannelAttention(c, rng, ca_reduction)
        if variant.use_dep:
            self.ca_dep = ChannelAttention(c, rng, ca_reduction)
        # focal-only setting keeps a single branch under the AiF slot
        if variant.use_aif or not variant.use_dep:
            self.split_aif = BConv(c, c, rng)
            self.refine_aif = make_refiner(variant.aif_path, c, rng, variant, slices, eps, drm_hidden)
        if variant.use_dep:
            self.split_dep = BConv(c, c, rng)
            self.refine_dep = make_refiner(variant.dep_path, c, rng, variant, slices, eps, drm_hidden)
        if variant.cf_mode != "none":
            self.cf = BConv(2 * c, c, rng)
        if variant.agg_mode == "progressive":
            self.agg_inner = BConv(2 * c, c, rng)
            self.agg_outer = BConv(2 * c, c, rng)
        elif variant.agg_mode == "flat_concat":
            self.agg = BConv(3 * c, c, rng)
        elif variant.agg_mode == "pair_concat":
            self.agg = BConv(2 * c, c, rng)

    def cross_fusion_input(self, fd: Tensor, fa: Tensor) -> Tensor:
        if self.variant.cf_mode == "cross_fusion":
            return ops.concat_channels(ops.add(fd, fa), ops.mul(fd, fa))
        return ops.concat_channels(fd, fa)

    def cross_fusion(self, fd: Tensor, fa: Tensor) -> Tensor:
        return self.cf(self.cross_fusion_input(fd, fa))

    def tri_modal_aggregate(self, ff: Tensor, fa: Tensor, fd: Tensor) -> Tensor:
        if self.variant.agg_mode == "progressive":
            return self.agg_outer(ops.concat_channels(ff, self.agg_inner(ops.concat_channels(fa, fd))))
        return self.agg(ops.concat_channels(ff, fa, fd))

    def forward_full(self, fa: Optional[Tensor], fd: Optional[Tensor], f_fs: Tensor) -> tuple:
        """Return ``(F, fa_ca, fd_ca)``; the attended guides feed auxiliary heads."""
        v = self.variant
        fa = self.ca_aif(fa) if v.use_aif else None
        fd = self.ca_dep(fd) if v.use_dep else None
        out_a = out_d = None
        if hasattr(self, "refine_aif"):
            out_a = _refine(self.refine_aif, fa, self.split_aif(f_fs))
        if v.use_dep:
            out_d = _refine(self.refine_dep, fd, self.split_dep(f_fs))

        if v.use_aif and v.use_dep:
            fused = self.cross_fusion(out_d, out_a)
            result = self.tri_modal_aggregate(fused, fa, fd)
        elif v.use_aif:
            result = self.agg(ops.concat_channels(out_a, fa))
        elif v.use_dep:
            result = self.agg(ops.concat_channels(out_d, fd))
        else:
            result = out_a
        return result, fa, fd

    def forward(self, fa: Optional[Tensor], fd: Optional[Tensor], f_fs: Tensor) -> Tensor:
        return self.forward_full(fa, fd, f_fs)[0]


def grfm_forward(params: GRFM, cfg: VariantConfig, fa, fd, f_fs) -> Tensor:
    if cfg != params.variant:
        raise ValueError("variant config does not match the block's construction")
    return params(fa, fd, f_fs)
