"""Differentiable primitives over :class:`~focalsod.tensor.Tensor`.

Each function computes its forward result with numpy and registers a
closure that maps the output gradient to parent gradients.  Backward rules
for the nonlinear primitives are module-level functions so tests can swap
one out and confirm the gradient checker notices.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ConfigError, DimensionError, Tensor, make_result

DIV_EPS = 1e-6
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _pair(a, b):
    """Coerce operands to tensors, giving bare constants the tensor's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "div")


def div_eps(a, b, eps: float = DIV_EPS) -> Tensor:
    """``a / (b + eps)``."""
    if eps <= 0:
        raise ConfigError(f"div_eps needs eps > 0, got {eps}")
    a, b = _pair(a, b)
    return div(a, add(b, eps))


def eltwise(op: str, a, b, eps: float = DIV_EPS) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "div_eps":
        return div_eps(a, b, eps)
    raise ConfigError(f"unknown eltwise op {op!r}")


def square(x: Tensor) -> Tensor:
    def backward(g):
        return (2.0 * g * x.data,)

    return make_result(x.data * x.data, (x,), backward, "square")


def log(x: Tensor) -> Tensor:
    def backward(g):
        return (g / x.data,)

    return make_result(np.log(x.data), (x,), backward, "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)

    def backward(g):
        inside = (x.data >= lo) & (x.data <= hi)
        return (g * inside,)

    return make_result(out, (x,), backward, "clamp")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _relu_backward(g, x):
    return g * (x > 0)


def relu(x: Tensor) -> Tensor:
    def backward(g):
        return (_relu_backward(g, x.data),)

    return make_result(np.maximum(x.data, 0), (x,), backward, "relu")


def _sigmoid_backward(g, y):
    return g * y * (1.0 - y)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)

    def backward(g):
        return (_sigmoid_backward(g, y),)

    return make_result(y, (x,), backward, "sigmoid")


def activation(op: str, x: Tensor) -> Tensor:
    if op == "relu":
        return relu(x)
    if op == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {op!r}")


def softmax_slices(x: Tensor) -> Tensor:
    """Softmax across the slice axis of an ``(n, 1, 1, 1)`` score tensor."""
    if x.ndim != 4 or x.shape[1:] != (1, 1, 1):
        raise DimensionError(f"softmax_slices expects (n,1,1,1), got {x.shape}")
    z = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=0, keepdims=True)),)

    return make_result(y, (x,), backward, "softmax_slices")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_result(np.asarray(x.data.sum(), dtype=x.dtype).reshape(()), (x,), backward, "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.size

    def backward(g):
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return make_result(np.asarray(x.data.mean(), dtype=x.dtype).reshape(()), (x,), backward, "mean")


def _mean_axes(x: Tensor, axes: tuple, name: str) -> Tensor:
    if x.size == 0:
        raise DimensionError(f"{name} on empty tensor")
    count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return make_result(x.data.mean(axis=axes, keepdims=True), (x,), backward, name)


def gap(x: Tensor) -> Tensor:
    """Global average pooling over height and width -> ``(n, c, 1, 1)``."""
    return _mean_axes(x, (2, 3), "gap")


def xpool(x: Tensor) -> Tensor:
    """Mean over width -> ``(n, c, h, 1)``."""
    return _mean_axes(x, (3,), "xpool")


def ypool(x: Tensor) -> Tensor:
    """Mean over height -> ``(n, c, 1, w)``."""
    return _mean_axes(x, (2,), "ypool")


def slice_sum(x: Tensor) -> Tensor:
    if x.shape[0] == 0:
        raise DimensionError("slice_sum over zero slices")

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_result(x.data.sum(axis=0, keepdims=True), (x,), backward, "slice_sum")


def slice_max(x: Tensor) -> Tensor:
    """Max across slices; ties route the gradient to the first maximal slice."""
    if x.shape[0] == 0:
        raise DimensionError("slice_max over zero slices")
    idx = x.data.argmax(axis=0)[None]
    out = np.take_along_axis(x.data, idx, axis=0)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=0)
        return (gx,)

    return make_result(out, (x,), backward, "slice_max")


def reduce(op: str, x: Tensor) -> Tensor:
    table = {"gap": gap, "xpool": xpool, "ypool": ypool, "slice_sum": slice_sum, "slice_max": slice_max}
    if op not in table:
        raise ConfigError(f"unknown reduction {op!r}")
    return table[op](x)


def maxpool2x2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x2 needs even spatial size, got {x.shape}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return make_result(out, (x,), backward, "maxpool2x2")


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise DimensionError(f"concat on axis {axis}: shapes {ref} and {t.shape} disagree off-axis")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def concat_channels(*tensors: Tensor) -> Tensor:
    return concat(tensors, axis=1)


def split(x: Tensor, sizes: Sequence[int], axis: int) -> list:
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not sum to axis {axis} length {x.shape[axis]}")
    out = []
    start = 0
    for s in sizes:
        out.append(take_range(x, start, start + s, axis))
        start += s
    return out


def take_range(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return make_result(x.data[index].copy(), (x,), backward, "take_range")


def swap_hw(x: Tensor) -> Tensor:
    """Exchange the height and width axes."""

    def backward(g):
        return (g.transpose(0, 1, 3, 2),)

    return make_result(np.ascontiguousarray(x.data.transpose(0, 1, 3, 2)), (x,), backward, "swap_hw")


def concat_spatial(xt: Tensor, yt: Tensor) -> Tensor:
    """Join an ``(n,c,h,1)`` and an ``(n,c,1,w)`` tensor into ``(n,c,h+w,1)``.

    The row-pooled tensor is transposed to ``(n,c,w,1)`` first;
    :func:`split_spatial` undoes the join exactly.
    """
    if xt.shape[3] != 1 or yt.shape[2] != 1:
        raise DimensionError(f"concat_spatial expects (n,c,h,1) and (n,c,1,w), got {xt.shape} and {yt.shape}")
    return concat([xt, swap_hw(yt)], axis=2)


def split_spatial(z: Tensor, h: int, w: int) -> tuple:
    if z.shape[2] != h + w or z.shape[3] != 1:
        raise DimensionError(f"split_spatial: {z.shape} does not hold h={h} + w={w}")
    a, b = split(z, [h, w], axis=2)
    return a, swap_hw(b)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(x.data.reshape(shape), (x,), backward, "reshape")


def slices_to_channels(x: Tensor) -> Tensor:
    """``(n, c, h, w) -> (1, n*c, h, w)``."""
    n, c, h, w = x.shape
    return reshape(x, (1, n * c, h, w))


def repeat_slices(x: Tensor, n: int) -> Tensor:
    """Replicate a single-slice tensor ``n`` times along the slice axis."""
    if x.shape[0] != 1:
        raise DimensionError(f"repeat_slices expects one slice, got {x.shape}")

    def backward(g):
        return (g.sum(axis=0, keepdims=True),)

    return make_result(np.repeat(x.data, n, axis=0), (x,), backward, "repeat_slices")


# ---------------------------------------------------------------------------
# convolution / normalization
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Gather patches into ``(c*k*k, n*oh*ow)``."""
    n, c = xp.shape[:2]
    cols = np.empty((c, k, k, n, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * oh * ow)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-axis input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    c_out, c_in, k, k2 = weight.shape
    if c != c_in or k != k2:
        raise DimensionError(f"conv2d: input {x.shape} does not match weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: stride {stride} / padding {padding} invalid")
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"conv2d: kernel {k} larger than padded input {x.shape}")
    parents = [x, weight] + ([bias] if bias is not None else [])

    if k == 1 and stride == 1 and padding == 0:
        # 1x1 fast path: a channel matmul
        xm = x.data.transpose(1, 0, 2, 3).reshape(c, -1)
        wm = weight.data.reshape(c_out, c)
        out = (wm @ xm).reshape(c_out, n, h, w).transpose(1, 0, 2, 3)
        if bias is not None:
            out = out + bias.data.reshape(1, -1, 1, 1)
        out = np.ascontiguousarray(out)

        def backward(g):
            gm = g.transpose(1, 0, 2, 3).reshape(c_out, -1)
            gx = (wm.T @ gm).reshape(c, n, h, w).transpose(1, 0, 2, 3) if x.requires_grad else None
            gw = (gm @ xm.T).reshape(weight.shape) if weight.requires_grad else None
            grads = [gx, gw]
            if bias is not None:
                grads.append(gm.sum(axis=1))
            return tuple(grads)

        return make_result(out, parents, backward, "conv2d")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, oh, ow)
    wm = weight.data.reshape(c_out, -1)
    out = (wm @ cols).reshape(c_out, n, oh, ow).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gm = g.transpose(1, 0, 2, 3).reshape(c_out, -1)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wm.T @ gm).reshape(c, k, k, n, oh, ow)
            gxp = np.zeros((n, c) + xp.shape[2:], dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(gm.sum(axis=1))
        return tuple(grads)

    return make_result(out, parents, backward, "conv2d")


class RunningStats:
    """Per-channel running mean/variance buffers of a batch-norm layer."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = BN_MOMENTUM):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum

    def update(self, mean: np.ndarray, var_unbiased: np.ndarray) -> None:
        m = self.momentum
        self.mean = ((1 - m) * self.mean + m * mean).astype(self.mean.dtype)
        self.var = ((1 - m) * self.var + m * var_unbiased).astype(self.var.dtype)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats, mode: str = "train",
              eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over ``(n, h, w)``."""
    if eps <= 0:
        raise ConfigError(f"batchnorm eps must be positive, got {eps}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm: gamma {gamma.shape} / beta {beta.shape} do not match {c} channels")
    g4 = gamma.data.reshape(1, c, 1, 1)
    b4 = beta.data.reshape(1, c, 1, 1)

    if mode == "eval":
        inv = 1.0 / np.sqrt(running.var.astype(x.dtype) + eps)
        xhat = (x.data - running.mean.astype(x.dtype).reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
        out = g4 * xhat + b4

        def backward(g):
            gx = g * (g4 * inv.reshape(1, c, 1, 1))
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batchnorm")

    if mode != "train":
        raise ConfigError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    axes = (0, 2, 3)
    m = x.size // c
    mean = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = g4 * xhat + b4
    unbiased = var.reshape(c) * (m / max(m - 1, 1))
    running.update(mean.reshape(c), unbiased)

    def backward(g):
        gxhat = g * g4
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batchnorm")


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic ``(n_out, n_in)`` linear-interpolation matrix.

    Half-pixel centers (source coordinate ``(i + 0.5) * n_in / n_out - 0.5``),
    clamped at the borders.
    """
    a = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == n_out:
        np.fill_diagonal(a, 1.0)
        return a.astype(dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(a, (rows, lo), 1.0 - frac)
    np.add.at(a, (rows, hi), frac)
    return a.astype(dtype)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"resize_bilinear target {out_h}x{out_w} invalid")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        def ident(g):
            return (g,)
        return make_result(x.data.copy(), (x,), ident, "resize_bilinear")
    ah = _interp_matrix(h, out_h, x.dtype)
    aw = _interp_matrix(w, out_w, x.dtype)
    out = np.einsum("ph,nchw,qw->ncpq", ah, x.data, aw, optimize=True)

    def backward(g):
        return (np.einsum("ph,ncpq,qw->nchw", ah, g, aw, optimize=True),)

    return make_result(out, (x,), backward, "resize_bilinear")
