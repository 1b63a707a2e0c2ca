"""Independent reference computations used as test oracles.

Everything here is written with plain loops over Python scalars and shares no
code with the package under test.
"""

import math

import numpy as np


def conv2d_loops(x, weight, bias, stride=1, padding=0):
    n, c, h, w = x.shape
    co, ci, k, _ = weight.shape
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for b in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = bias[o]
                    for ch in range(c):
                        for di in range(k):
                            for dj in range(k):
                                yy = i * stride + di - padding
                                xx = j * stride + dj - padding
                                if 0 <= yy < h and 0 <= xx < w:
                                    acc += x[b, ch, yy, xx] * weight[o, ch, di, dj]
                    out[b, o, i, j] = acc
    return out


def softmax_scalar(scores):
    m = max(scores)
    e = [math.exp(s - m) for s in scores]
    z = sum(e)
    return [v / z for v in e]


def bilinear_1d(values, n_out):
    """Half-pixel-centre linear resampling of a Python list."""
    n_in = len(values)
    out = []
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        f = src - lo
        out.append(values[lo] * (1 - f) + values[hi] * f)
    return out


# ---------------------------------------------------------------------------
# metrics, transcribed from their published definitions
# ---------------------------------------------------------------------------

def mae_loops(pred, gt):
    h, w = len(pred), len(pred[0])
    return sum(abs(pred[i][j] - (1.0 if gt[i][j] >= 0.5 else 0.0)) for i in range(h) for j in range(w)) / (h * w)


def _levels(n):
    return [k / (n - 1) for k in range(n)]


def f_max_sweep(pred, gt, beta2=0.3, n=256):
    h, w = len(pred), len(pred[0])
    g = [[gt[i][j] >= 0.5 for j in range(w)] for i in range(h)]
    n_gt = sum(v for row in g for v in row)
    if n_gt == 0:
        return 0.0
    best = 0.0
    for t in _levels(n):
        tp = fp = 0
        for i in range(h):
            for j in range(w):
                if pred[i][j] >= t:
                    if g[i][j]:
                        tp += 1
                    else:
                        fp += 1
        if tp + fp == 0:
            f = 0.0
        else:
            p = tp / (tp + fp)
            r = tp / n_gt
            f = 0.0 if beta2 * p + r == 0 else (1 + beta2) * p * r / (beta2 * p + r)
        best = max(best, f)
    return best


def e_max_sweep(pred, gt, n=256):
    eps = 2.220446049250313e-16
    h, w = len(pred), len(pred[0])
    total = h * w
    g = [[1.0 if gt[i][j] >= 0.5 else 0.0 for j in range(w)] for i in range(h)]
    g_mean = sum(map(sum, g)) / total
    best = 0.0
    for t in _levels(n):
        b = [[1.0 if pred[i][j] >= t else 0.0 for j in range(w)] for i in range(h)]
        b_mean = sum(map(sum, b)) / total
        acc = 0.0
        for i in range(h):
            for j in range(w):
                if g_mean == 0:
                    e = 1.0 - b[i][j]
                elif g_mean == 1:
                    e = b[i][j]
                else:
                    pp = b[i][j] - b_mean
                    pg = g[i][j] - g_mean
                    xi = 2 * pp * pg / (pp * pp + pg * pg + eps)
                    e = (xi + 1) ** 2 / 4
                acc += e
        best = max(best, acc / total)
    return best


def s_measure_reference(pred, gt, alpha=0.5):
    """Structure measure transcribed from its original definition (1-based centroid)."""
    eps = 2.220446049250313e-16
    h, w = len(pred), len(pred[0])
    G = [[gt[i][j] >= 0.5 for j in range(w)] for i in range(h)]
    P = [[float(pred[i][j]) for j in range(w)] for i in range(h)]
    area = h * w
    y = sum(v for row in G for v in row) / area
    if y == 0:
        return 1.0 - sum(map(sum, P)) / area
    if y == 1:
        return sum(map(sum, P)) / area

    def object_score(vals):
        if not vals:
            return 0.0
        m = sum(vals) / len(vals)
        if len(vals) > 1:
            sd = math.sqrt(sum((v - m) ** 2 for v in vals) / (len(vals) - 1))
        else:
            sd = 0.0
        return 2.0 * m / (m * m + 1.0 + sd + eps)

    fg_vals = [P[i][j] for i in range(h) for j in range(w) if G[i][j]]
    bg_vals = [1.0 - P[i][j] for i in range(h) for j in range(w) if not G[i][j]]
    s_obj = y * object_score(fg_vals) + (1 - y) * object_score(bg_vals)

    total = sum(v for row in G for v in row)
    X = int(math.floor(sum((j + 1) * G[i][j] for i in range(h) for j in range(w)) / total + 0.5))
    Y = int(math.floor(sum((i + 1) * G[i][j] for i in range(h) for j in range(w)) / total + 0.5))

    def region(r0, r1, c0, c1):
        p = [P[i][j] for i in range(r0, r1) for j in range(c0, c1)]
        g = [1.0 if G[i][j] else 0.0 for i in range(r0, r1) for j in range(c0, c1)]
        return p, g

    def ssim(p, g):
        N = len(p)
        if N == 0:
            return 0.0
        x = sum(p) / N
        yy = sum(g) / N
        sx = sum((a - x) ** 2 for a in p) / (N - 1 + eps)
        sy = sum((b - yy) ** 2 for b in g) / (N - 1 + eps)
        sxy = sum((a - x) * (b - yy) for a, b in zip(p, g)) / (N - 1 + eps)
        al = 4 * x * yy * sxy
        be = (x * x + yy * yy) * (sx + sy)
        if al != 0:
            return al / (be + eps)
        if be == 0:
            return 1.0
        return 0.0

    w1 = X * Y / area
    w2 = (w - X) * Y / area
    w3 = X * (h - Y) / area
    w4 = 1 - w1 - w2 - w3
    quads = [(0, Y, 0, X), (0, Y, X, w), (Y, h, 0, X), (Y, h, X, w)]
    s_reg = 0.0
    for wt, q in zip((w1, w2, w3, w4), quads):
        if wt > 0:
            s_reg += wt * ssim(*region(*q))
    return max(alpha * s_obj + (1 - alpha) * s_reg, 0.0)
