"""Differentiable numeric kernels.

Each public function takes :class:`~htcan.tensor.Tensor` inputs (plain numpy
arrays and python scalars are wrapped), computes the forward value with numpy
and, when a tape is active, records a closure computing the vector-Jacobian
product. Reductions always run over a fixed axis order so results are
bit-reproducible for a given build.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, record

__all__ = [
    "activation",
    "add",
    "concat",
    "conv2d",
    "div",
    "extract_windows",
    "getitem",
    "layer_norm",
    "linear",
    "matmul",
    "matmul_batched",
    "mean",
    "mirror_indices",
    "mul",
    "pad2d",
    "permute",
    "reflect_pad2d",
    "reshape",
    "roll",
    "softmax_lastdim",
    "sqrt",
    "square",
    "sub",
    "sum",
    "take_rows",
    "transpose",
]


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and isinstance(x, (int, float, np.floating)):
        return Tensor(np.asarray(x, dtype=like.dtype))
    return as_tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    if isinstance(b, Tensor):
        return _wrap(a, b), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("div", out, (a, b), bw)


def square(x) -> Tensor:
    x = _wrap(x)
    out = x.data * x.data
    return record("square", out, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x) -> Tensor:
    x = _wrap(x)
    out = np.sqrt(x.data)
    return record("sqrt", out, (x,), lambda g: (0.5 * g / out,))


# -- reductions --------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _wrap(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    axes = _norm_axes(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes)
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return record("mean", np.asarray(out), (x,), bw)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading dimensions."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return record("matmul", out, (a, b), bw)


def matmul_batched(a, b) -> Tensor:
    """Per-slice product of ``(batch, m, k)`` and ``(batch, k, n)``."""
    a, b = _pair(a, b)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"matmul_batched expects rank-3 operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"batch counts differ: {a.shape} vs {b.shape}")
    return matmul(a, b)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is ``(out, in)``."""
    y = matmul(x, transpose(weight, -1, -2))
    if bias is not None:
        y = add(y, bias)
    return y


# -- layout -------------------------------------------------------------------

def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _wrap(x)
    out = x.data.reshape(tuple(shape))
    return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x, axes: Sequence[int]) -> Tensor:
    x = _wrap(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return record("permute", out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def transpose(x, a: int, b: int) -> Tensor:
    x = _wrap(x)
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return permute(x, axes)


def getitem(x, key) -> Tensor:
    """Basic (slice/int) indexing."""
    x = _wrap(x)
    out = np.ascontiguousarray(x.data[key])

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return record("getitem", out, (x,), bw)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [_wrap(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return record("concat", out, tuple(xs), bw)


def roll(x, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    x = _wrap(x)
    shifts, axes = tuple(shifts), tuple(axes)
    out = np.roll(x.data, shifts, axis=axes)
    back = tuple(-s for s in shifts)
    return record("roll", out, (x,), lambda g: (np.roll(g, back, axis=axes),))


def pad2d(x, pads: tuple[int, int, int, int]) -> Tensor:
    """Zero padding of the last two axes by ``(left, right, top, bottom)``."""
    x = _wrap(x)
    left, right, top, bottom = pads
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    out = np.pad(x.data, width)
    h, w = x.shape[-2:]
    return record("pad2d", out, (x,), lambda g: (np.ascontiguousarray(g[..., top:top + h, left:left + w]),))


def mirror_indices(n: int, before: int, after: int, strict: bool = True) -> np.ndarray:
    """Source indices for reflect padding a length-``n`` axis.

    The edge sample is not repeated (``[a, b, c]`` padded by one on the left
    starts with ``b``). With ``strict=False`` pads longer than the axis keep
    folding back and forth instead of raising.
    """
    if strict and (before >= n or after >= n):
        raise ConfigError(f"reflect pad ({before}, {after}) must be smaller than the dimension {n}")
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx > n - 1, period - idx, idx)


def reflect_pad2d(x, pads: tuple[int, int, int, int], strict: bool = True) -> Tensor:
    """Reflect padding of the last two axes by ``(left, right, top, bottom)``."""
    x = _wrap(x)
    left, right, top, bottom = (int(p) for p in pads)
    if min(left, right, top, bottom) < 0:
        raise ConfigError(f"negative pad {pads}")
    h, w = x.shape[-2:]
    rows = mirror_indices(h, top, bottom, strict)
    cols = mirror_indices(w, left, right, strict)
    out = x.data[..., rows, :][..., cols]

    def bw(g):
        gr = np.zeros(g.shape[:-1] + (w,), dtype=g.dtype)
        np.add.at(gr, (Ellipsis, cols), g)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (Ellipsis, rows, slice(None)), gr)
        return (gx,)

    return record("reflect_pad2d", out, (x,), bw)


def take_rows(table, index: np.ndarray) -> Tensor:
    """Gather ``table[index]`` along the first axis."""
    table = _wrap(table)
    index = np.asarray(index, dtype=np.intp)
    out = table.data[index]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index.reshape(-1), g.reshape((-1,) + table.shape[1:]))
        return (gt,)

    return record("take_rows", out, (table,), bw)


def extract_windows(x, size: int, stride: int, pad: int) -> Tensor:
    """Overlapping square windows of an ``(n, c, h, w)`` map as token sequences.

    The map is zero padded by ``pad`` and ``size`` x ``size`` windows are taken
    every ``stride`` pixels in raster order. Returns
    ``(n * rows * cols, size * size, c)``.
    """
    x = _wrap(x)
    n, c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    nh = (h + 2 * pad - size) // stride + 1
    nw = (w + 2 * pad - size) // stride + 1
    win = sliding_window_view(xp, (size, size), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :nh, :nw]
    out = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 5, 1)).reshape(n * nh * nw, size * size, c)

    def bw(g):
        g6 = g.reshape(n, nh, nw, size, size, c).transpose(0, 5, 1, 2, 3, 4)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(size):
            for j in range(size):
                gxp[:, :, i:i + stride * nh:stride, j:j + stride * nw:stride] += g6[..., i, j]
        return (np.ascontiguousarray(gxp[:, :, pad:pad + h, pad:pad + w]),)

    return record("extract_windows", out, (x,), bw)


# -- convolution --------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int, groups: int) -> np.ndarray:
    n, cin = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    cin_g = cin // groups
    win = win.reshape(n, groups, cin_g, oh, ow, kh, kw).transpose(0, 1, 3, 4, 2, 5, 6)
    return np.ascontiguousarray(win).reshape(n, groups, oh * ow, cin_g * kh * kw)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation of ``(n, c_in, h, w)`` with ``(c_out, c_in/groups, kh, kw)``."""
    x, weight = _wrap(x), _wrap(weight)
    bias = None if bias is None else _wrap(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"groups={groups} must divide input channels {cin} and output channels {cout}")
    if cin_g * groups != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape} (groups={groups})")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d kernel {weight.shape} larger than padded input {x.shape}")
    cout_g = cout // groups
    k = cin_g * kh * kw
    wm = weight.data.reshape(groups, cout_g, k)

    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0 and groups == 1
    if pointwise:
        cols = x.data.reshape(n, cin, h * w)
        out = np.matmul(wm[0], cols)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = _im2col(xp, kh, kw, stride, oh, ow, groups)
        out = np.matmul(wm[None], np.swapaxes(cols, -1, -2))
    out = out.reshape(n, cout, oh, ow)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def bw(g):
        gx = gw = gb = None
        if pointwise:
            g3 = g.reshape(n, cout, h * w)
            if weight.requires_grad:
                gw = np.matmul(g3, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(weight.shape)
            if x.requires_grad:
                gx = np.matmul(wm[0].T, g3).reshape(x.shape)
        else:
            g4 = g.reshape(n, groups, cout_g, oh * ow)
            if weight.requires_grad:
                gw = np.matmul(g4, cols).sum(axis=0).reshape(weight.shape)
            if x.requires_grad:
                gcols = np.matmul(np.swapaxes(g4, -1, -2), wm[None])
                gcols = gcols.reshape(n, groups, oh, ow, cin_g, kh, kw).transpose(0, 1, 4, 2, 3, 5, 6)
                gcols = gcols.reshape(n, cin, oh, ow, kh, kw)
                gxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[..., i, j]
                gx = np.ascontiguousarray(gxp[:, :, padding:padding + h, padding:padding + w])
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return record("conv2d", out, (x, weight, bias), bw)


# -- normalisation and nonlinearities ----------------------------------------

def softmax_lastdim(x) -> Tensor:
    x = _wrap(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record("softmax", out, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-6, axis: int = 1) -> Tensor:
    """Normalise over ``axis`` (the channel axis by default) then apply the affine."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match axis length {c} of {x.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = c
    gam = gamma.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gam + beta.data.reshape(bshape)
    other = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gam
            gx = rstd * (dxhat - dxhat.mean(axis=axis, keepdims=True)
                         - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True))
        ggam = (g * xhat).sum(axis=other) if gamma.requires_grad else None
        gbet = g.sum(axis=other) if beta.requires_grad else None
        return gx, ggam, gbet

    return record("layer_norm", out, (x, gamma, beta), bw)


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
ACTIVATIONS = ("gelu", "silu", "relu", "sigmoid")


def activation(x, kind: str) -> Tensor:
    """Elementwise nonlinearity: ``gelu`` (exact erf form), ``silu``, ``relu`` or ``sigmoid``."""
    x = _wrap(x)
    d = x.data
    if kind == "gelu":
        cdf = 0.5 * (1.0 + special.erf(d * _SQRT_HALF))
        out = d * cdf

        def bw(g):
            return (g * (cdf + d * _INV_SQRT_2PI * np.exp(-0.5 * d * d)),)
    elif kind == "silu":
        s = special.expit(d)
        out = d * s

        def bw(g):
            return (g * s * (1.0 + d * (1.0 - s)),)
    elif kind == "relu":
        out = np.maximum(d, 0)

        def bw(g):
            return (g * (d > 0),)
    elif kind == "sigmoid":
        out = special.expit(d)

        def bw(g):
            return (g * out * (1.0 - out),)
    else:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return record(kind, out.astype(d.dtype, copy=False), (x,), bw)
