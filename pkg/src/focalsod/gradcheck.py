"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import NumericError, Tensor

REL_FLOOR = 1e-6
# one-sided slopes further apart than this mark a non-differentiable probe
KINK_TOL = 1e-3


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_index: Optional[tuple]
    checked: int
    skipped: int = 0

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_err < tol


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _scalar(fn, *args) -> float:
    out = fn(*args)
    val = out.item() if isinstance(out, Tensor) else float(out)
    if not np.isfinite(val):
        raise NumericError(f"gradient check: function value is {val}")
    return val


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-4,
               max_elems: Optional[int] = 40, rng: Optional[np.random.Generator] = None,
               floor: float = REL_FLOOR, kink_retries: int = 2) -> GradCheckReport:
    """Compare backprop gradients of ``fn()`` w.r.t. ``inputs`` to central differences.

    ``fn`` closes over ``inputs`` and is re-evaluated after each perturbation,
    so it must be deterministic (batch norm in eval mode).  At most
    ``max_elems`` randomly chosen entries per input are probed.

    A probe whose forward and backward one-sided slopes disagree straddles a
    kink (ReLU at zero, a max tie).  The step is shrunk tenfold up to
    ``kink_retries`` times; if the slopes still disagree the probe is counted
    in ``skipped`` rather than scored.  A wrong backward rule on a smooth
    region leaves the slopes in agreement, so it is still caught.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
        t.requires_grad = True
    out = fn()
    if not np.isfinite(out.item()):
        raise NumericError(f"gradient check: function value is {out.item()}")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    f0 = out.item()
    worst = 0.0
    worst_idx = None
    checked = skipped = 0
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        count = flat.size
        picks = np.arange(count) if max_elems is None or count <= max_elems else rng.choice(count, max_elems, replace=False)
        for p in picks:
            numeric = _probe(fn, flat, int(p), f0, step, kink_retries, floor)
            if numeric is None:
                skipped += 1
                continue
            err = relative_error(float(analytic[k].reshape(-1)[p]), numeric, floor)
            checked += 1
            if worst_idx is None or err > worst:
                worst = err
                worst_idx = (k,) + tuple(int(i) for i in np.unravel_index(p, t.shape))
    return GradCheckReport(worst, worst_idx, checked, skipped)


def _probe(fn, flat: np.ndarray, p: int, f0: float, step: float, retries: int, floor: float) -> Optional[float]:
    """Central difference at ``flat[p]``, or ``None`` if every step straddles a kink."""
    orig = flat[p]
    h = step
    try:
        for _ in range(retries + 1):
            flat[p] = orig + h
            f_plus = _scalar(fn)
            flat[p] = orig - h
            f_minus = _scalar(fn)
            flat[p] = orig
            if relative_error((f_plus - f0) / h, (f0 - f_minus) / h, floor) <= KINK_TOL:
                return (f_plus - f_minus) / (2 * h)
            h /= 10
    finally:
        flat[p] = orig
    return None


def check_function(fn: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-4, **kw) -> GradCheckReport:
    """Single-input convenience wrapper: ``fn`` maps ``x`` to a scalar."""
    return grad_check(lambda: fn(x), [x], step=step, **kw)
