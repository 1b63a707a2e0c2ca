"""The complete three-stream saliency network."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .backbone import EncoderStream, depth_to_rgb
from .config import ModelConfig
from .decoder import Decoder
from .grfm import GRFM
from .layers import Module, ModuleList, PredictionHead
from .tensor import DimensionError, Tensor

# fixed sub-seeds keep each component's init independent of the variant
_STREAM_AIF, _STREAM_DEP, _STREAM_FOCAL, _GRFM, _DECODER, _AUX = range(6)


def _rng(seed: int, part: int, sub: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, part, sub])


class SaliencyNet(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c = cfg.unified_channels
        v = cfg.variant
        self.focal_stream = EncoderStream(cfg.encoder, c, _rng(cfg.seed, _STREAM_FOCAL))
        if v.use_aif:
            self.aif_stream = EncoderStream(cfg.encoder, c, _rng(cfg.seed, _STREAM_AIF))
            self.aux_aif = PredictionHead(c, _rng(cfg.seed, _AUX, 0))
        if v.use_dep:
            self.depth_stream = EncoderStream(cfg.encoder, c, _rng(cfg.seed, _STREAM_DEP))
            self.aux_dep = PredictionHead(c, _rng(cfg.seed, _AUX, 1))
        self.grfms = ModuleList([
            GRFM(c, v, cfg.slices, _rng(cfg.seed, _GRFM, i), cfg.ca_reduction, cfg.div_eps, cfg.drm_hidden)
            for i in range(4)
        ])
        self.decoder = Decoder(c, _rng(cfg.seed, _DECODER))
        for _, m in self.named_modules():
            if hasattr(m, "eps") and hasattr(m, "running"):
                m.eps = cfg.bn_eps

    @property
    def output_keys(self) -> tuple:
        keys = ["S2", "S3", "S4", "S5"]
        if self.cfg.variant.use_aif:
            keys.append("S_aif")
        if self.cfg.variant.use_dep:
            keys.append("S_dep")
        return tuple(keys)

    def forward(self, aif: Optional[Tensor], depth: Optional[Tensor], slices: Tensor) -> dict:
        """Predict saliency maps.

        ``aif`` is ``(1,3,H,W)``, ``depth`` ``(1,1,H,W)`` and ``slices``
        ``(N,3,H,W)``.  Returns maps keyed by :attr:`output_keys`, each
        ``(1,1,H,W)``.
        """
        v = self.cfg.variant
        h, w = slices.shape[2:]
        if slices.shape[0] != self.cfg.slices and v.ff_mode == "concat_conv":
            raise DimensionError(f"model built for {self.cfg.slices} slices, got {slices.shape[0]}")
        f_fs = self.focal_stream(slices)
        f_a = self.aif_stream(aif) if v.use_aif else [None] * 4
        f_d = self.depth_stream(depth_to_rgb(depth)) if v.use_dep else [None] * 4

        feats = []
        guides_a = []
        guides_d = []
        for k, block in enumerate(self.grfms):
            out, ga, gd = block.forward_full(f_a[k], f_d[k], f_fs[k])
            feats.append(out)
            guides_a.append(ga)
            guides_d.append(gd)

        maps = self.decoder(feats, h, w)
        outputs = {f"S{i}": s for i, s in zip((2, 3, 4, 5), maps)}
        if v.use_aif:
            outputs["S_aif"] = self.aux_aif(guides_a[0], h, w)
        if v.use_dep:
            outputs["S_dep"] = self.aux_dep(guides_d[0], h, w)
        return outputs

    def predict(self, aif, depth, slices) -> Tensor:
        """Final saliency map (the finest decoder output)."""
        return self.forward(aif, depth, slices)["S2"]


def sample_tensors(sample, dtype=np.float32) -> tuple:
    """Convert a data sample into the ``(aif, depth, slices, gt)`` network inputs."""
    aif = Tensor(sample.aif[None].astype(dtype))
    depth = Tensor(sample.depth[None].astype(dtype))
    slices = Tensor(np.stack(sample.slices).astype(dtype))
    gt = Tensor(sample.gt[None].astype(dtype))
    return aif, depth, slices, gt
