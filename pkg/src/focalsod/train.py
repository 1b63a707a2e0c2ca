"""Training loop, inference helpers and ablation runs."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig, run_config_from_dict, variant as get_variant
from .data import Sample, augment, dataset_iter, list_sample_dirs, load_sample, synthesize_sample
from .losses import total_loss
from .metrics import EvalReport, evaluate
from .model import SaliencyNet, sample_tensors
from .optim import Adam, lr_at_epoch
from .tensor import NumericError, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: SaliencyNet
    optimizer: Adam
    losses: List[float] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)
    epoch_lrs: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.losses)


def load_samples(cfg: RunConfig) -> List[Sample]:
    """Materialize the configured dataset in its natural order."""
    if cfg.data.path is not None:
        return [load_sample(d, cfg.model.slices) for d in list_sample_dirs(cfg.data.path)]
    return [synthesize_sample(cfg.data.synth, i) for i in range(cfg.data.synth.count)]


def build_model(cfg: RunConfig) -> SaliencyNet:
    return SaliencyNet(cfg.model)


def _param_norms(model: SaliencyNet, limit: int = 5) -> str:
    norms = sorted(((float(np.linalg.norm(p.data)), k) for k, p in model.named_parameters()), reverse=True)
    return ", ".join(f"{k}={n:.3g}" for n, k in norms[:limit])


def train(cfg: RunConfig, samples: Optional[Sequence[Sample]] = None, model: Optional[SaliencyNet] = None,
          checkpoint_path: Optional[str] = None, on_iteration: Optional[Callable] = None) -> TrainResult:
    """Train with Adam, batch size 1, and the step learning-rate schedule.

    Samples are visited in a fresh seed-determined order each epoch.  A
    checkpoint is written after every epoch when ``checkpoint_path`` is set.
    """
    tc = cfg.train
    samples = list(samples) if samples is not None else load_samples(cfg)
    if not samples:
        raise ValueError("training set is empty")
    model = model or build_model(cfg)
    model.train()
    opt = Adam(model.parameters(), lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.adam_eps)
    aug_rng = np.random.default_rng([tc.seed, 1])
    result = TrainResult(model=model, optimizer=opt)
    keys = model.output_keys
    it = 0
    for epoch in range(tc.epochs):
        opt.lr = lr_at_epoch(epoch, tc.lr, tc.decay_epoch, tc.decay_factor)
        result.epoch_lrs.append(opt.lr)
        order = np.random.default_rng([cfg.data.shuffle_seed, epoch]).permutation(len(samples))
        for idx in order:
            sample = samples[idx]
            if tc.augment:
                sample = augment(sample, aug_rng)
            aif, depth, slices, gt = sample_tensors(sample)
            opt.zero_grad()
            loss = total_loss(model(aif, depth, slices), gt, keys)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at iteration {it}; largest parameter norms: {_param_norms(model)}")
            loss.backward()
            opt.step()
            result.losses.append(value)
            result.lrs.append(opt.lr)
            if on_iteration is not None:
                on_iteration(it, epoch, value)
            it += 1
            if tc.max_iterations is not None and it >= tc.max_iterations:
                break
        log.info("epoch %d lr %.3g mean loss %.4f", epoch, opt.lr, float(np.mean(result.losses[-len(order):])))
        if checkpoint_path:
            ckpt_io.save(checkpoint_path, model, cfg.to_dict(), opt, epoch + 1)
        if tc.max_iterations is not None and it >= tc.max_iterations:
            break
    return result


def restore(path, cfg: Optional[RunConfig] = None) -> tuple:
    """Rebuild ``(config, model, checkpoint)`` from a checkpoint file.

    With ``cfg`` given, the checkpoint must fit that configuration; a shape
    mismatch raises :class:`DimensionError` naming the offending parameter.
    """
    ck = ckpt_io.load(path)
    cfg = cfg if cfg is not None else run_config_from_dict(ck.config, RunConfig())
    model = build_model(cfg)
    model.load_state_dict(ck.model_state)
    model.eval()
    return cfg, model, ck


def predict(model: SaliencyNet, sample: Sample) -> np.ndarray:
    """Eval-mode final saliency map ``(H, W)`` for one sample."""
    model.eval()
    aif, depth, slices, _ = sample_tensors(sample)
    with no_grad():
        s2 = model.predict(aif, depth, slices)
    return s2.data[0, 0]


def evaluate_model(model: SaliencyNet, samples: Sequence[Sample]) -> EvalReport:
    return evaluate((s.id, predict(model, s), s.gt[0]) for s in samples)


@dataclass
class AblationRow:
    name: str
    num_parameters: int
    final_loss: float
    report: EvalReport


def run_ablation(cfg: RunConfig, names: Sequence[str], samples: Optional[Sequence[Sample]] = None) -> List[AblationRow]:
    """Train each named variant on the same data and seed; score on the training set."""
    samples = list(samples) if samples is not None else load_samples(cfg)
    rows = []
    for name in names:
        run_cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, variant=get_variant(name)))
        run_cfg.validate()
        res = train(run_cfg, samples)
        rows.append(AblationRow(name, res.model.num_parameters(), res.losses[-1], evaluate_model(res.model, samples)))
        log.info("variant %s: %s", name, rows[-1].report.row())
    return rows
