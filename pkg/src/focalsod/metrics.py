"""Saliency evaluation: MAE, max F-measure, S-measure, max E-measure.

Predictions are float maps in ``[0, 1]``; ground truth is binarized at 0.5.
Threshold sweeps use ``n_thresholds`` evenly spaced levels in ``[0, 1]``
(256 by default, i.e. ``k / 255``) and count a pixel as foreground when
``pred >= level``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional

import numpy as np

from .ops import _interp_matrix

BETA2 = 0.3
N_THRESHOLDS = 256
EPS = np.spacing(1.0)


def _prep(pred, gt) -> tuple:
    p = np.asarray(pred, dtype=np.float64).squeeze()
    g = np.asarray(gt, dtype=np.float64).squeeze()
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in size")
    return p, g >= 0.5


def thresholds(n: int = N_THRESHOLDS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def mae(pred, gt) -> float:
    p, g = _prep(pred, gt)
    return float(np.abs(p - g).mean())


def f_measure_curve(pred, gt, beta2: float = BETA2, n_thresholds: int = N_THRESHOLDS) -> np.ndarray:
    p, g = _prep(pred, gt)
    fg = p.reshape(1, -1) >= thresholds(n_thresholds)[:, None]
    gt_flat = g.reshape(-1)
    tp = (fg & gt_flat).sum(axis=1).astype(np.float64)
    n_pred = fg.sum(axis=1).astype(np.float64)
    n_gt = float(gt_flat.sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 0.0)
        recall = tp / n_gt if n_gt > 0 else np.zeros_like(tp)
        denom = beta2 * precision + recall
        f = np.where(denom > 0, (1 + beta2) * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    return f


def f_measure_max(pred, gt, beta2: float = BETA2, n_thresholds: int = N_THRESHOLDS) -> float:
    """Maximum F-measure over the threshold sweep; 0 for an all-background truth."""
    _, g = _prep(pred, gt)
    if not g.any():
        return 0.0
    return float(f_measure_curve(pred, gt, beta2, n_thresholds).max())


def _enhanced_alignment(fg: np.ndarray, g: np.ndarray) -> float:
    """Mean enhanced-alignment score of a binary map ``fg`` against ``g``."""
    fgf = fg.astype(np.float64)
    gf = g.astype(np.float64)
    if not g.any():
        enhanced = 1.0 - fgf
    elif g.all():
        enhanced = fgf
    else:
        phi_p = fgf - fgf.mean()
        phi_g = gf - gf.mean()
        xi = 2.0 * phi_p * phi_g / (phi_p * phi_p + phi_g * phi_g + EPS)
        enhanced = (xi + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def e_measure_curve(pred, gt, n_thresholds: int = N_THRESHOLDS) -> np.ndarray:
    p, g = _prep(pred, gt)
    return np.array([_enhanced_alignment(p >= t, g) for t in thresholds(n_thresholds)])


def e_measure_max(pred, gt, n_thresholds: int = N_THRESHOLDS) -> float:
    return float(e_measure_curve(pred, gt, n_thresholds).max())


# ---------------------------------------------------------------------------
# S-measure
# ---------------------------------------------------------------------------

def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + EPS))


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    fg = _object_score(p[g])
    bg = _object_score(1.0 - p[~g])
    u = g.mean()
    return float(u * fg + (1 - u) * bg)


def _centroid(g: np.ndarray) -> tuple:
    """1-based rounded centroid ``(x, y)``; image centre for an empty mask."""
    h, w = g.shape
    total = g.sum()
    if total == 0:
        return int(round(w / 2)), int(round(h / 2))
    cols = np.arange(1, w + 1)
    rows = np.arange(1, h + 1)
    # round half away from zero, as in the reference definition
    x = int(np.floor((g.sum(axis=0) * cols).sum() / total + 0.5))
    y = int(np.floor((g.sum(axis=1) * rows).sum() / total + 0.5))
    return x, y


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x = p.mean()
    y = g.mean()
    sx2 = ((p - x) ** 2).sum() / (n - 1 + EPS)
    sy2 = ((g - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((p - x) * (g - y)).sum() / (n - 1 + EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx2 + sy2)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    x, y = _centroid(g)
    area = h * w
    gf = g.astype(np.float64)
    quads = [
        (slice(0, y), slice(0, x)),
        (slice(0, y), slice(x, w)),
        (slice(y, h), slice(0, x)),
        (slice(y, h), slice(x, w)),
    ]
    weights = [x * y / area, (w - x) * y / area, x * (h - y) / area]
    weights.append(1.0 - sum(weights))
    return float(sum(wt * _ssim(p[q], gf[q]) for wt, q in zip(weights, quads) if wt > 0))


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: ``alpha * object + (1 - alpha) * region``, clipped at 0."""
    p, g = _prep(pred, gt)
    y = g.mean()
    if y == 0:
        return float(1.0 - p.mean())
    if y == 1:
        return float(p.mean())
    q = alpha * _s_object(p, g) + (1 - alpha) * _s_region(p, g)
    return float(max(q, 0.0))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class SampleScores:
    id: str
    s_alpha: float
    f_beta_max: float
    e_phi_max: float
    mae: float
    degenerate_gt: bool = False


@dataclass
class EvalReport:
    s_alpha: float
    f_beta_max: float
    e_phi_max: float
    mae: float
    samples: List[SampleScores] = field(default_factory=list)

    COLUMNS = ("S_alpha", "F_beta_max", "E_phi_max", "MAE")

    def row(self) -> dict:
        return {"S_alpha": self.s_alpha, "F_beta_max": self.f_beta_max, "E_phi_max": self.e_phi_max, "MAE": self.mae}

    def to_dict(self) -> dict:
        return {
            "aggregate": self.row(),
            "samples": [asdict(s) for s in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = ["id\tS_alpha\tF_beta_max\tE_phi_max\tMAE"]
        for s in self.samples:
            flag = "\t(degenerate gt)" if s.degenerate_gt else ""
            lines.append(f"{s.id}\t{s.s_alpha:.4f}\t{s.f_beta_max:.4f}\t{s.e_phi_max:.4f}\t{s.mae:.4f}{flag}")
        lines.append(f"mean\t{self.s_alpha:.4f}\t{self.f_beta_max:.4f}\t{self.e_phi_max:.4f}\t{self.mae:.4f}")
        return "\n".join(lines)


def match_resolution(pred, gt) -> np.ndarray:
    """Bilinearly resample ``pred`` to the ground-truth size when they differ."""
    p = np.asarray(pred, dtype=np.float64).squeeze()
    g = np.asarray(gt).squeeze()
    if p.ndim != 2 or g.ndim != 2:
        raise ValueError(f"expected 2-D maps, got {p.shape} and {g.shape}")
    if p.shape == g.shape:
        return p
    ah = _interp_matrix(p.shape[0], g.shape[0], np.float64)
    aw = _interp_matrix(p.shape[1], g.shape[1], np.float64)
    return np.clip(ah @ p @ aw.T, 0.0, 1.0)


def score_sample(sample_id: str, pred, gt, beta2: float = BETA2, n_thresholds: int = N_THRESHOLDS) -> SampleScores:
    """All four metrics for one map; ``pred`` is resized to the truth first."""
    pred = match_resolution(pred, gt)
    _, g = _prep(pred, gt)
    return SampleScores(
        id=sample_id,
        s_alpha=s_measure(pred, gt),
        f_beta_max=f_measure_max(pred, gt, beta2, n_thresholds),
        e_phi_max=e_measure_max(pred, gt, n_thresholds),
        mae=mae(pred, gt),
        degenerate_gt=not g.any(),
    )


def evaluate(pairs: Iterable[tuple], beta2: float = BETA2, n_thresholds: int = N_THRESHOLDS) -> EvalReport:
    """Score ``(id, pred, gt)`` triples and average them."""
    rows = [score_sample(i, p, g, beta2, n_thresholds) for i, p, g in pairs]
    if not rows:
        raise ValueError("no samples to evaluate")
    return EvalReport(
        s_alpha=float(np.mean([r.s_alpha for r in rows])),
        f_beta_max=float(np.mean([r.f_beta_max for r in rows])),
        e_phi_max=float(np.mean([r.e_phi_max for r in rows])),
        mae=float(np.mean([r.mae for r in rows])),
        samples=rows,
    )
