"""Independent scalar-loop reference implementations.

Each oracle is written with plain Python loops over float64 scalars and
shares no code with the vectorised kernels it is used to check.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> np.ndarray:
    """Direct cross-correlation with explicit loops over batch, output channel and position."""
    n, cin, h, wd = x.shape
    cout, cpg, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    opg = cout // groups
    out = np.zeros((n, cout, oh, ow))
    for bi in range(n):
        for co in range(cout):
            g = co // opg
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0 if b is None else float(b[co])
                    for ci in range(cpg):
                        src = g * cpg + ci
                        for ky in range(kh):
                            iy = oy * stride + ky - padding
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * stride + kx - padding
                                if 0 <= ix < wd:
                                    acc += float(x[bi, src, iy, ix]) * float(w[co, ci, ky, kx])
                    out[bi, co, oy, ox] = acc
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched triple loop: ``(B, m, k) @ (B, k, n)``."""
    bsz, m, k = a.shape
    n = b.shape[2]
    out = np.zeros((bsz, m, n))
    for s in range(bsz):
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for t in range(k):
                    acc += float(a[s, i, t]) * float(b[s, t, j])
                out[s, i, j] = acc
    return out


def softmax_row(row) -> list[float]:
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def _linear_token(t, w, b) -> list[float]:
    return [sum(float(w[o, i]) * float(t[i]) for i in range(len(t))) + (0.0 if b is None else float(b[o]))
            for o in range(w.shape[0])]


def window_attention(tokens: np.ndarray, qkv_w, qkv_b, proj_w, proj_b, heads: int,
                     bias: np.ndarray | None = None) -> np.ndarray:
    """Multi-head self-attention on ``(windows, n, c)`` tokens, one scalar at a time.

    ``qkv_w`` is ``(3c, c)`` (out, in); ``bias`` is ``(heads, n, n)``.
    """
    nw, n, c = tokens.shape
    d = c // heads
    out = np.zeros((nw, n, proj_w.shape[0]))
    for wi in range(nw):
        qkv = [_linear_token(tokens[wi, t], qkv_w, qkv_b) for t in range(n)]
        mixed = [[0.0] * c for _ in range(n)]
        for h in range(heads):
            lo = h * d
            for i in range(n):
                scores = []
                for j in range(n):
                    s = sum(qkv[i][lo + e] * qkv[j][c + lo + e] for e in range(d)) / math.sqrt(d)
                    if bias is not None:
                        s += float(bias[h, i, j])
                    scores.append(s)
                p = softmax_row(scores)
                for e in range(d):
                    mixed[i][lo + e] = sum(p[j] * qkv[j][2 * c + lo + e] for j in range(n))
        for i in range(n):
            out[wi, i] = _linear_token(mixed[i], proj_w, proj_b)
    return out


def layer_norm_token(t, gamma, beta, eps: float = 1e-6) -> list[float]:
    c = len(t)
    mu = sum(float(v) for v in t) / c
    var = sum((float(v) - mu) ** 2 for v in t) / c
    return [(float(t[i]) - mu) / math.sqrt(var + eps) * float(gamma[i]) + float(beta[i]) for i in range(c)]


def scam(fl: np.ndarray, fr: np.ndarray, p: dict, tied: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Stereo cross-attention computed scanline by scanline from scalars.

    ``p`` maps short names (``norm_l.weight``, ``l_proj1.weight``, ``scale_l`` ...)
    to arrays; linear weights are ``(out, in)``.
    """
    n, c, h, w = fl.shape
    rs = "l" if tied else "r"
    out_l, out_r = fl.astype(np.float64).copy(), fr.astype(np.float64).copy()
    for bi in range(n):
        for y in range(h):
            q, k, vl, vr = [], [], [], []
            for x in range(w):
                tl, tr = fl[bi, :, y, x], fr[bi, :, y, x]
                q.append(_linear_token(layer_norm_token(tl, p["norm_l.weight"], p["norm_l.bias"]),
                                       p["l_proj1.weight"], p["l_proj1.bias"]))
                k.append(_linear_token(layer_norm_token(tr, p[f"norm_{rs}.weight"], p[f"norm_{rs}.bias"]),
                                       p[f"{rs}_proj1.weight"], p[f"{rs}_proj1.bias"]))
                vl.append(_linear_token(tl, p["l_proj2.weight"], p["l_proj2.bias"]))
                vr.append(_linear_token(tr, p[f"{rs}_proj2.weight"], p[f"{rs}_proj2.bias"]))
            s = [[sum(q[i][e] * k[j][e] for e in range(c)) / math.sqrt(c) for j in range(w)] for i in range(w)]
            for i in range(w):
                a = softmax_row(s[i])
                at = softmax_row([s[j][i] for j in range(w)])
                for e in range(c):
                    out_l[bi, e, y, i] += float(p["scale_l"][e]) * sum(a[j] * vr[j][e] for j in range(w))
                    out_r[bi, e, y, i] += float(p[f"scale_{rs}"][e]) * sum(at[j] * vl[j][e] for j in range(w))
    return out_l, out_r


def ssim_gray(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5,
              k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """SSIM by visiting every fully-contained window and summing weighted moments directly."""
    r = [i - (size - 1) / 2.0 for i in range(size)]
    g1 = [math.exp(-(v * v) / (2 * sigma * sigma)) for v in r]
    tot = sum(g1)
    g1 = [v / tot for v in g1]
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    h, w = a.shape
    vals = []
    for y in range(h - size + 1):
        for x in range(w - size + 1):
            ma = mb = 0.0
            for i in range(size):
                for j in range(size):
                    wt = g1[i] * g1[j]
                    ma += wt * float(a[y + i, x + j])
                    mb += wt * float(b[y + i, x + j])
            va = vb = cov = 0.0
            for i in range(size):
                for j in range(size):
                    wt = g1[i] * g1[j]
                    da = float(a[y + i, x + j]) - ma
                    db = float(b[y + i, x + j]) - mb
                    va += wt * da * da
                    vb += wt * db * db
                    cov += wt * da * db
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def adam_steps(p0: float, grads: list[float], lr: float, beta1: float, beta2: float, eps: float,
               weight_decay: float = 0.0, decoupled: bool = False) -> float:
    """Scalar Adam/AdamW written out step by step."""
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        if decoupled:
            p = p - lr * weight_decay * p
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
    return p


def mirror_index(i: int, n: int) -> int:
    """Reflect an out-of-range index without repeating the edge sample."""
    if n == 1:
        return 0
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def reflect_pad(x: np.ndarray, left: int, right: int, top: int, bottom: int) -> np.ndarray:
    h, w = x.shape[-2:]
    out = np.empty(x.shape[:-2] + (h + top + bottom, w + left + right), dtype=x.dtype)
    for y in range(out.shape[-2]):
        for xx in range(out.shape[-1]):
            out[..., y, xx] = x[..., mirror_index(y - top, h), mirror_index(xx - left, w)]
    return out


def block_unshuffle(region: np.ndarray, p: int) -> np.ndarray:
    """``(c, 3p, 3p)`` neighbourhood -> ``(9c, p, p)`` with patch ``3i + j`` in channels ``(3i+j)c..``."""
    c = region.shape[0]
    out = np.empty((9 * c, p, p), dtype=region.dtype)
    for i in range(3):
        for j in range(3):
            k = 3 * i + j
            for ch in range(c):
                out[k * c + ch] = region[ch, i * p:(i + 1) * p, j * p:(j + 1) * p]
    return out


def bicubic_downsample_1d(x: np.ndarray, factor: int, a: float = -0.5) -> np.ndarray:
    """Anti-aliased cubic downsampling of a 1-D signal with clamped edges."""
    def k(t):
        t = abs(t)
        if t <= 1:
            return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
        if t < 2:
            return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
        return 0.0

    n = len(x)
    out = []
    for j in range(n // factor):
        center = (j + 0.5) * factor - 0.5
        lo, hi = math.floor(center - 2 * factor), math.ceil(center + 2 * factor)
        ws = [(i, k((center - i) / factor)) for i in range(lo, hi + 1)]
        tot = sum(wt for _, wt in ws)
        out.append(sum(wt * float(x[min(max(i, 0), n - 1)]) for i, wt in ws) / tot)
    return np.array(out)
