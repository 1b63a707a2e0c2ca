"""Block-level finite-difference gradient checks at small shapes.

Each block is built in float64 with batch norm in eval mode so the function is
deterministic under perturbation.  Gradients are checked with respect to the
block inputs and a few randomly chosen parameter tensors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from . import ops
from .arm import ARM
from .config import EncoderConfig, ModelConfig, variant
from .decoder import Decoder
from .drm import DRM
from .gradcheck import GradCheckReport, grad_check
from .grfm import GRFM
from .layers import Module
from .losses import OUTPUT_KEYS, total_loss
from .model import SaliencyNet
from .tensor import Tensor

TOLERANCE = 1e-3


@dataclass
class BlockResult:
    block: str
    report: GradCheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed(TOLERANCE)


def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _projection(out: Tensor, r: np.ndarray) -> Tensor:
    # fixed random projection turns any output into a generic scalar loss
    return ops.sum_all(ops.mul(out, r))


def _some_params(module: Module, rng, k: int = 3) -> list:
    params = module.parameters()
    idx = rng.choice(len(params), size=min(k, len(params)), replace=False)
    return [params[i] for i in sorted(idx)]


def _prepare(module: Module) -> Module:
    module.to(np.float64)
    module.eval()
    return module


def _arm(rng, n, c, s):
    m = _prepare(ARM(c, rng, slices=n))
    fa, ffs = _rand(rng, 1, c, s, s), _rand(rng, n, c, s, s)
    r = rng.standard_normal((1, c, s, s))
    return (lambda: _projection(m(fa, ffs), r)), [fa, ffs] + _some_params(m, rng)


def _drm(rng, n, c, s):
    m = _prepare(DRM(c, rng, slices=n))
    fd, ffs = _rand(rng, 1, c, s, s), _rand(rng, n, c, s, s)
    r = rng.standard_normal((1, c, s, s))
    return (lambda: _projection(m(fd, ffs), r)), [fd, ffs] + _some_params(m, rng)


def _grfm(rng, n, c, s):
    m = _prepare(GRFM(c, variant("Full"), n, rng))
    fa, fd, ffs = _rand(rng, 1, c, s, s), _rand(rng, 1, c, s, s), _rand(rng, n, c, s, s)
    r = rng.standard_normal((1, c, s, s))
    return (lambda: _projection(m(fa, fd, ffs), r)), [fa, fd, ffs] + _some_params(m, rng)


def _decoder(rng, n, c, s):
    m = _prepare(Decoder(c, rng))
    feats = [_rand(rng, 1, c, s >> k, s >> k) for k in range(4)]
    rs = [rng.standard_normal((1, 1, s, s)) for _ in range(4)]

    def fn():
        maps = m(feats, s, s)
        total = _projection(maps[0], rs[0])
        for out, r in zip(maps[1:], rs[1:]):
            total = ops.add(total, _projection(out, r))
        return total

    return fn, feats + _some_params(m, rng)


def _loss(rng, n, c, s):
    logits = [_rand(rng, 1, 1, s, s) for _ in OUTPUT_KEYS]
    gt = Tensor((rng.random((1, 1, s, s)) > 0.5).astype(np.float64))

    def fn():
        return total_loss({k: ops.sigmoid(z) for k, z in zip(OUTPUT_KEYS, logits)}, gt)

    return fn, logits


def _network(rng, n, c, s):
    cfg = ModelConfig(encoder=EncoderConfig(widths=(4, 4, 8, 8, 8), convs=(1, 1, 1, 1, 1), input_size=s),
                      slices=n, unified_channels=c, seed=int(rng.integers(1 << 31)))
    m = _prepare(SaliencyNet(cfg))
    aif, depth, slices = Tensor(rng.random((1, 3, s, s))), Tensor(rng.random((1, 1, s, s))), Tensor(rng.random((n, 3, s, s)))
    gt = Tensor((rng.random((1, 1, s, s)) > 0.5).astype(np.float64))
    return (lambda: total_loss(m(aif, depth, slices), gt)), _some_params(m, rng, 4)


BLOCKS: dict = {
    "arm": _arm,
    "drm": _drm,
    "grfm_full": _grfm,
    "decoder": _decoder,
    "total_loss": _loss,
    "network_params": _network,
}


def run_gradchecks(seed: int = 0, slices: int = 3, channels: int = 8, size: int = 16,
                   blocks: Sequence[str] = tuple(BLOCKS), max_elems: int = 30,
                   step: float = 1e-5) -> List[BlockResult]:
    """Check every named block; returns one result per block in order."""
    results = []
    for k, name in enumerate(blocks):
        rng = np.random.default_rng([seed, k])
        t0 = time.perf_counter()
        fn, inputs = BLOCKS[name](rng, slices, channels, size)
        report = grad_check(fn, inputs, step=step, max_elems=max_elems, rng=rng)
        results.append(BlockResult(name, report, time.perf_counter() - t0))
    return results


def format_results(results: Sequence[BlockResult]) -> str:
    lines = ["block\tmax_rel_err\tchecked\tseconds\tstatus"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.block}\t{r.report.max_rel_err:.3e}\t{r.report.checked}\t{r.seconds:.2f}\t{status}")
    return "\n".join(lines)


def corrupt_backward(target: Callable) -> Callable:
    """Wrap a backward rule so it returns a scaled gradient (for sensitivity tests)."""
    def bad(*args, **kw):
        out = target(*args, **kw)
        return out * 1.01 if isinstance(out, np.ndarray) else tuple(o * 1.01 for o in out)
    return bad
