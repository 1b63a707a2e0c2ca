"""Training losses: BCE + IoU + (1 - E-measure), summed over prediction maps."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import ops
from .tensor import DimensionError, Tensor

BCE_CLAMP = 1e-7
IOU_SMOOTH = 1.0
EM_EPS = 1e-8

# the coarse focal-branch prediction is deliberately not supervised
OUTPUT_KEYS = ("S2", "S3", "S4", "S5", "S_aif", "S_dep")


def _check(pred: Tensor, gt: Tensor, name: str) -> None:
    if pred.shape != gt.shape:
        raise DimensionError(f"{name}: prediction {pred.shape} and ground truth {gt.shape} differ")


def bce_loss(pred: Tensor, gt: Tensor, clamp: float = BCE_CLAMP) -> Tensor:
    _check(pred, gt, "bce_loss")
    p = ops.clamp(pred, clamp, 1.0 - clamp)
    g = gt.data
    pos = ops.mul(ops.log(p), g)
    neg = ops.mul(ops.log(ops.sub(1.0, p)), 1.0 - g)
    return -ops.mean_all(ops.add(pos, neg))


def iou_loss(pred: Tensor, gt: Tensor, smooth: float = IOU_SMOOTH) -> Tensor:
    _check(pred, gt, "iou_loss")
    inter = ops.sum_all(ops.mul(pred, gt.data))
    union = ops.sub(ops.add(ops.sum_all(pred), float(gt.data.sum())), inter)
    return ops.sub(1.0, ops.div(ops.add(inter, smooth), ops.add(union, smooth)))


def e_measure_loss(pred: Tensor, gt: Tensor, eps: float = EM_EPS) -> Tensor:
    """``1 - E`` on the soft prediction (no thresholding)."""
    _check(pred, gt, "e_measure_loss")
    g = gt.data
    g_mean = float(g.mean())
    if g_mean == 0.0:
        # all-background truth: alignment reduces to the predicted background
        return ops.mean_all(pred)
    if g_mean == 1.0:
        return ops.sub(1.0, ops.mean_all(pred))
    phi_p = ops.sub(pred, ops.mean_all(pred))
    phi_g = (g - g_mean).astype(pred.dtype)
    num = ops.mul(phi_p, 2.0 * phi_g)
    den = ops.add(ops.square(phi_p), phi_g * phi_g + eps)
    xi = ops.div(num, den)
    enhanced = ops.mul(ops.square(ops.add(xi, 1.0)), 0.25)
    return ops.sub(1.0, ops.mean_all(enhanced))


def combined_loss(pred: Tensor, gt: Tensor) -> Tensor:
    return ops.add(ops.add(bce_loss(pred, gt), iou_loss(pred, gt)), e_measure_loss(pred, gt))


def total_loss(outputs: Mapping[str, Tensor], gt: Tensor, keys=None) -> Tensor:
    """Sum of the combined loss over every supervised output present.

    ``keys`` defaults to all six maps; pass the subset a variant produces.
    """
    keys = OUTPUT_KEYS if keys is None else tuple(keys)
    missing = [k for k in keys if k not in outputs]
    if missing:
        raise KeyError(f"total_loss: missing outputs {missing}")
    total = None
    for k in keys:
        term = combined_loss(outputs[k], gt)
        total = term if total is None else ops.add(total, term)
    return total


def as_gt(gt) -> Tensor:
    arr = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    return Tensor(arr.astype(np.float32) if arr.dtype != np.float64 else arr)
