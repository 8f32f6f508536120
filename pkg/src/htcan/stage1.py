"""Stage 1: transformer single-image super-resolution on multi-patch inputs.

Shallow 3x3 conv -> cascaded residual hybrid attention groups -> norm, conv
and global residual -> conv + pixel-shuffle reconstruction. Each group holds
``blocks_per_group`` hybrid attention blocks (windowed self-attention with a
parallel conv channel-attention branch), one overlapping-window
cross-attention block and a trailing 3x3 conv.

Parameters live in a :class:`~htcan.weights.WeightStore` under
``stage1.<group>.<block>.<tensor>`` names.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from . import init as initializers
from . import ops
from .errors import ConfigError, ShapeError
from .pixel_ops import (
    multi_patch_from_padded,
    pad_for_multi_patch,
    patch_grid,
    pixel_shuffle,
    window_partition,
    window_reverse,
)
from .tensor import Tensor, get_default_dtype, resolve_dtype
from .weights import WeightStore

MASK_VALUE = -100.0


def config_from_dict(cls, data: Mapping[str, Any]):
    """Build a config dataclass from a mapping, rejecting unknown keys."""
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} field(s): {', '.join(sorted(unknown))}")
    cfg = cls(**dict(data))
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class Stage1Config:
    channels: int = 180
    groups: int = 12
    blocks_per_group: int = 2
    heads: int = 2
    window: int = 24
    scale: int = 4
    activation: str = "gelu"
    patch: int = 48
    channel_attention_reduction: int = 4
    mlp_ratio: float = 2.0
    overlap_ratio: float = 0.5
    shift: bool = True
    multi_patch: bool = True
    img_channels: int = 3
    recon_channels: int | None = None

    @classmethod
    def full(cls, **overrides) -> "Stage1Config":
        """HAT-L sized trunk with the 24x24 window."""
        base = dict(channels=180, groups=12, blocks_per_group=6, heads=6, window=24, patch=48,
                    channel_attention_reduction=3, recon_channels=64)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tiny(cls, **overrides) -> "Stage1Config":
        base = dict(channels=8, groups=1, blocks_per_group=1, heads=2, window=4, patch=8)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Stage1Config":
        return config_from_dict(cls, data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.channels < 1 or self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} must be divisible by heads {self.heads}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.groups < 0 or self.blocks_per_group < 1 or self.patch < 1:
            raise ConfigError("groups >= 0, blocks_per_group >= 1 and patch >= 1 are required")
        if self.activation not in ("gelu", "silu"):
            raise ConfigError(f"unknown activation {self.activation!r}; expected gelu or silu")
        if self.channel_attention_reduction < 1 or self.mlp_ratio <= 0 or self.overlap_ratio < 0:
            raise ConfigError("channel_attention_reduction >= 1, mlp_ratio > 0, overlap_ratio >= 0 required")

    @property
    def in_channels(self) -> int:
        return self.img_channels * (9 if self.multi_patch else 1)

    @property
    def hidden(self) -> int:
        return int(round(self.channels * self.mlp_ratio))

    @property
    def squeezed(self) -> int:
        return max(1, self.channels // self.channel_attention_reduction)

    @property
    def overlap_window(self) -> int:
        # kept window + even overlap so the unfold padding is symmetric
        return self.window + 2 * int(self.window * self.overlap_ratio / 2)

    @property
    def recon(self) -> int:
        return self.recon_channels or self.channels

    @property
    def upsample_factors(self) -> list[int]:
        s = self.scale
        if s == 1:
            return []
        if s & (s - 1) == 0:
            return [2] * int(math.log2(s))
        return [s]


# -- parameter layout ---------------------------------------------------------

def _linear(name: str, out_f: int, in_f: int, zero: bool = False) -> dict:
    return {f"{name}.weight": ((out_f, in_f), "zeros" if zero else "trunc_normal"),
            f"{name}.bias": ((out_f,), "zeros")}


def _conv(name: str, out_c: int, in_c: int, k: int, zero: bool = False) -> dict:
    return {f"{name}.weight": ((out_c, in_c, k, k), "zeros" if zero else "conv"),
            f"{name}.bias": ((out_c,), "zeros")}


def _norm(name: str, c: int) -> dict:
    return {f"{name}.weight": ((c,), "ones"), f"{name}.bias": ((c,), "zeros")}


def param_layout(cfg: Stage1Config, prefix: str = "stage1") -> dict[str, tuple[tuple[int, ...], str]]:
    """Every parameter name with its shape and initialiser kind."""
    cfg.validate()
    C, ws, ows = cfg.channels, cfg.window, cfg.overlap_window
    L: dict = {}
    L.update(_conv(f"{prefix}.shallow", C, cfg.in_channels, 3))
    for g in range(cfg.groups):
        gp = f"{prefix}.g{g}"
        for b in range(cfg.blocks_per_group):
            bp = f"{gp}.b{b}"
            L.update(_norm(f"{bp}.norm1", C))
            L.update(_linear(f"{bp}.attn.qkv", 3 * C, C))
            L.update(_linear(f"{bp}.attn.proj", C, C, zero=True))
            L[f"{bp}.attn.rpb"] = (((2 * ws - 1) ** 2, cfg.heads), "zeros")
            L.update(_conv(f"{bp}.cab.conv1", cfg.squeezed, C, 3))
            L.update(_conv(f"{bp}.cab.conv2", C, cfg.squeezed, 3))
            L.update(_linear(f"{bp}.cab.ca1", cfg.squeezed, C))
            L.update(_linear(f"{bp}.cab.ca2", C, cfg.squeezed))
            L[f"{bp}.conv_scale"] = ((1,), "zeros")
            L.update(_norm(f"{bp}.norm2", C))
            L.update(_linear(f"{bp}.mlp.fc1", cfg.hidden, C))
            L.update(_linear(f"{bp}.mlp.fc2", C, cfg.hidden, zero=True))
        op = f"{gp}.ocab"
        L.update(_norm(f"{op}.norm1", C))
        L.update(_linear(f"{op}.qkv", 3 * C, C))
        L.update(_linear(f"{op}.proj", C, C, zero=True))
        L[f"{op}.rpb"] = (((ws + ows - 1) ** 2, cfg.heads), "zeros")
        L.update(_norm(f"{op}.norm2", C))
        L.update(_linear(f"{op}.mlp.fc1", cfg.hidden, C))
        L.update(_linear(f"{op}.mlp.fc2", C, cfg.hidden, zero=True))
        L.update(_conv(f"{gp}.conv", C, C, 3, zero=True))
    L.update(_norm(f"{prefix}.norm", C))
    L.update(_conv(f"{prefix}.body_conv", C, C, 3))
    R = cfg.recon
    L.update(_conv(f"{prefix}.recon.pre", R, C, 3))
    for k, f in enumerate(cfg.upsample_factors):
        L.update(_conv(f"{prefix}.recon.up{k}", R * f * f, R, 3))
    L.update(_conv(f"{prefix}.recon.last", cfg.img_channels, R, 3))
    return L


def init_weights(cfg: Stage1Config, seed: int = 0, prefix: str = "stage1", dtype=None) -> WeightStore:
    """Truncated-normal projections, uniform convs, zeros for biases and residual outputs."""
    rng = np.random.default_rng(seed)
    dt = resolve_dtype(dtype)
    store = WeightStore()
    for name, (shape, kind) in param_layout(cfg, prefix).items():
        store[name] = Tensor(initializers.make(kind, rng, shape).astype(dt))
    return store


def check_weights(weights: WeightStore, cfg: Stage1Config, prefix: str = "stage1") -> None:
    for name, (shape, _) in param_layout(cfg, prefix).items():
        t = weights[name]
        if tuple(t.shape) != shape:
            raise ShapeError(f"parameter {name!r} has shape {t.shape}, expected {shape}")


# -- building blocks ----------------------------------------------------------

def pointwise(x, W: WeightStore, name: str) -> Tensor:
    """Per-pixel linear layer on an ``(n, c, h, w)`` map."""
    w = W[f"{name}.weight"]
    return ops.conv2d(x, ops.reshape(w, w.shape + (1, 1)), W[f"{name}.bias"])


def conv3(x, W: WeightStore, name: str) -> Tensor:
    return ops.conv2d(x, W[f"{name}.weight"], W[f"{name}.bias"], padding=1)


def norm(x, W: WeightStore, name: str, axis: int = 1) -> Tensor:
    return ops.layer_norm(x, W[f"{name}.weight"], W[f"{name}.bias"], eps=1e-6, axis=axis)


@functools.lru_cache(maxsize=None)
def relative_position_index(ws: int, kv_ws: int | None = None) -> np.ndarray:
    """Flat table index for every (query, key) offset inside a window.

    ``kv_ws`` enlarges the key window for overlapping cross-attention.
    """
    kv = kv_ws or ws
    qy, qx = np.divmod(np.arange(ws * ws), ws)
    ky, kx = np.divmod(np.arange(kv * kv), kv)
    span = ws + kv - 1
    dy = qy[:, None] - ky[None, :] + kv - 1
    dx = qx[:, None] - kx[None, :] + kv - 1
    idx = dy * span + dx
    idx.setflags(write=False)
    return idx


@functools.lru_cache(maxsize=64)
def shift_mask(h: int, w: int, ws: int, shift: int) -> np.ndarray:
    """Additive attention mask separating regions that a cyclic shift glued together."""
    region = np.zeros((h, w), dtype=np.int64)
    cuts = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
    label = 0
    for hs in cuts:
        for wsl in cuts:
            region[hs, wsl] = label
            label += 1
    tiles = region.reshape(h // ws, ws, w // ws, ws).transpose(0, 2, 1, 3).reshape(-1, ws * ws)
    mask = np.where(tiles[:, None, :] != tiles[:, :, None], MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


def relative_bias(table, index: np.ndarray, heads: int) -> Tensor:
    nq, nk = index.shape
    b = ops.take_rows(table, index.reshape(-1))
    return ops.permute(ops.reshape(b, (nq, nk, heads)), (2, 0, 1))


def attention_heads(q, k, v, heads: int, bias=None, mask: np.ndarray | None = None) -> Tensor:
    """Multi-head scaled dot-product attention on token batches.

    ``q`` is ``(b, nq, c)``, ``k``/``v`` are ``(b, nk, c)``; ``bias`` is
    ``(heads, nq, nk)`` and ``mask`` ``(windows, nq, nk)`` repeating over the
    batch. Returns ``(b, nq, c)``.
    """
    b, nq, c = q.shape
    nk = k.shape[1]
    if c % heads:
        raise ConfigError(f"token dim {c} is not divisible by {heads} heads")
    d = c // heads

    def split(t, n):
        return ops.permute(ops.reshape(t, (b, n, heads, d)), (0, 2, 1, 3))

    qh, kh, vh = split(q, nq), split(k, nk), split(v, nk)
    scores = ops.matmul(ops.mul(qh, 1.0 / math.sqrt(d)), ops.transpose(kh, -1, -2))
    if bias is not None:
        scores = ops.add(scores, bias)
    if mask is not None:
        nw = mask.shape[0]
        scores = ops.reshape(scores, (b // nw, nw, heads, nq, nk))
        scores = ops.add(scores, mask[None, :, None].astype(scores.dtype))
        scores = ops.reshape(scores, (b, heads, nq, nk))
    attn = ops.softmax_lastdim(scores)
    out = ops.matmul(attn, vh)
    return ops.reshape(ops.permute(out, (0, 2, 1, 3)), (b, nq, c))


def window_attention(windows, qkv_w, qkv_b, proj_w, proj_b, heads: int, bias=None,
                     mask: np.ndarray | None = None) -> Tensor:
    """Self-attention inside each window followed by the output projection."""
    windows = ops._wrap(windows)
    b, n, c = windows.shape
    if c % heads:
        raise ConfigError(f"token dim {c} is not divisible by {heads} heads")
    qkv = ops.linear(windows, qkv_w, qkv_b)
    q = ops.getitem(qkv, (slice(None), slice(None), slice(0, c)))
    k = ops.getitem(qkv, (slice(None), slice(None), slice(c, 2 * c)))
    v = ops.getitem(qkv, (slice(None), slice(None), slice(2 * c, 3 * c)))
    out = attention_heads(q, k, v, heads, bias, mask)
    return ops.linear(out, proj_w, proj_b)


def channel_attention_block(x, W: WeightStore, prefix: str, act: str) -> Tensor:
    t = ops.activation(conv3(x, W, f"{prefix}.conv1"), act)
    t = conv3(t, W, f"{prefix}.conv2")
    s = ops.mean(t, axis=(2, 3), keepdims=True)
    s = ops.activation(pointwise(s, W, f"{prefix}.ca1"), "relu")
    s = ops.activation(pointwise(s, W, f"{prefix}.ca2"), "sigmoid")
    return ops.mul(t, s)


def mlp(x, W: WeightStore, prefix: str, act: str) -> Tensor:
    return pointwise(ops.activation(pointwise(x, W, f"{prefix}.fc1"), act), W, f"{prefix}.fc2")


def hab_forward(x, W: WeightStore, cfg: Stage1Config, prefix: str, shifted: bool = False) -> Tensor:
    """Hybrid attention block on an ``(n, C, h, w)`` map (h, w multiples of the window)."""
    n, c, h, w = x.shape
    ws = cfg.window
    s = ws // 2 if (shifted and min(h, w) > ws) else 0
    hn = norm(x, W, f"{prefix}.norm1")
    a = ops.roll(hn, (-s, -s), (2, 3)) if s else hn
    win, grid = window_partition(a, ws)
    bias = relative_bias(W[f"{prefix}.attn.rpb"], relative_position_index(ws), cfg.heads)
    a = window_attention(win, W[f"{prefix}.attn.qkv.weight"], W[f"{prefix}.attn.qkv.bias"],
                         W[f"{prefix}.attn.proj.weight"], W[f"{prefix}.attn.proj.bias"],
                         cfg.heads, bias, shift_mask(h, w, ws, s) if s else None)
    a = window_reverse(a, grid, ws, x.shape)
    if s:
        a = ops.roll(a, (s, s), (2, 3))
    conv_branch = channel_attention_block(hn, W, f"{prefix}.cab", cfg.activation)
    y = ops.add(ops.add(x, a), ops.mul(W[f"{prefix}.conv_scale"], conv_branch))
    return ops.add(y, mlp(norm(y, W, f"{prefix}.norm2"), W, f"{prefix}.mlp", cfg.activation))


def ocab_forward(x, W: WeightStore, cfg: Stage1Config, prefix: str) -> Tensor:
    """Overlapping cross-attention: window queries attend to enlarged key windows."""
    n, c, h, w = x.shape
    ws, ows = cfg.window, cfg.overlap_window
    hn = norm(x, W, f"{prefix}.norm1")
    qkv = pointwise(hn, W, f"{prefix}.qkv")
    q = ops.getitem(qkv, (slice(None), slice(0, c)))
    kv = ops.getitem(qkv, (slice(None), slice(c, 3 * c)))
    qw, grid = window_partition(q, ws)
    kvw = ops.extract_windows(kv, ows, ws, (ows - ws) // 2)
    k = ops.getitem(kvw, (slice(None), slice(None), slice(0, c)))
    v = ops.getitem(kvw, (slice(None), slice(None), slice(c, 2 * c)))
    bias = relative_bias(W[f"{prefix}.rpb"], relative_position_index(ws, ows), cfg.heads)
    o = window_reverse(attention_heads(qw, k, v, cfg.heads, bias), grid, ws, x.shape)
    y = ops.add(x, pointwise(o, W, f"{prefix}.proj"))
    return ops.add(y, mlp(norm(y, W, f"{prefix}.norm2"), W, f"{prefix}.mlp", cfg.activation))


def rhag_forward(x, W: WeightStore, cfg: Stage1Config, prefix: str) -> Tensor:
    """Residual hybrid attention group; output dims equal input dims."""
    x = ops._wrap(x)
    ws = cfg.window
    if x.shape[2] % ws or x.shape[3] % ws:
        raise ShapeError(f"rhag_forward: spatial dims {x.shape[2:]} must be multiples of window {ws}")
    t = x
    for b in range(cfg.blocks_per_group):
        t = hab_forward(t, W, cfg, f"{prefix}.b{b}", shifted=cfg.shift and b % 2 == 1)
    t = ocab_forward(t, W, cfg, f"{prefix}.ocab")
    return ops.add(x, conv3(t, W, f"{prefix}.conv"))


def trunk_forward(f0, W: WeightStore, cfg: Stage1Config, prefix: str = "stage1") -> Tensor:
    t = f0
    for g in range(cfg.groups):
        t = rhag_forward(t, W, cfg, f"{prefix}.g{g}")
    return t


def stage1_forward(x, W: WeightStore, cfg: Stage1Config, prefix: str = "stage1") -> Tensor:
    """Super-resolve a batch of (multi-patch) inputs ``(n, in_channels, p, p)``.

    Returns ``(n, img_channels, p * scale, p * scale)``; any size works, the
    map is reflect padded to window multiples internally and cropped after.
    """
    x = ops._wrap(x)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"stage 1 expects (n, {cfg.in_channels}, h, w) input, got {x.shape}")
    h, w = x.shape[2:]
    ws = cfg.window
    ph, pw = (-h) % ws, (-w) % ws
    if ph or pw:
        x = ops.reflect_pad2d(x, (0, pw, 0, ph), strict=False)
    f0 = conv3(x, W, f"{prefix}.shallow")
    t = trunk_forward(f0, W, cfg, prefix)
    t = ops.add(conv3(norm(t, W, f"{prefix}.norm"), W, f"{prefix}.body_conv"), f0)
    r = ops.activation(conv3(t, W, f"{prefix}.recon.pre"), cfg.activation)
    for k, f in enumerate(cfg.upsample_factors):
        r = pixel_shuffle(conv3(r, W, f"{prefix}.recon.up{k}"), f)
    out = conv3(r, W, f"{prefix}.recon.last")
    if ph or pw:
        out = ops.getitem(out, (slice(None), slice(None), slice(0, h * cfg.scale), slice(0, w * cfg.scale)))
    return out


# -- whole-image inference ----------------------------------------------------

@dataclass(frozen=True)
class Tiling:
    """Patch batching for whole-image inference; ``workers`` > 1 runs batches on threads."""

    batch: int = 64
    workers: int = 1


def stage1_superresolve_image(image, W: WeightStore, cfg: Stage1Config, tiling: Tiling | None = None,
                              prefix: str = "stage1", trace: list | None = None) -> Tensor:
    """Super-resolve a whole ``(n, c, h, w)`` image patch by patch.

    Patches tile the image on a ``patch``-spaced grid; the last row/column is
    shifted back to end at the border and overlapping output pixels are
    averaged. Output is ``(n, c, h * scale, w * scale)``. ``trace`` collects
    ``(label, shape)`` entries for the first patch batch and the output.
    """
    tiling = tiling or Tiling()
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=get_default_dtype())
    if arr.ndim != 4 or arr.shape[1] != cfg.img_channels:
        raise ShapeError(f"stage 1 expects (n, {cfg.img_channels}, h, w) images, got {arr.shape}")
    n, c, h, w = arr.shape
    p, s = cfg.patch, cfg.scale
    ys, xs = patch_grid(h, p), patch_grid(w, p)
    centers = [(y, x) for y in ys for x in xs]
    outs = []
    for i in range(n):
        img = arr[i:i + 1]
        if cfg.multi_patch:
            padded = pad_for_multi_patch(img, p)

            def assemble(chunk, padded=padded):
                return multi_patch_from_padded(padded, chunk, p)
        else:
            def assemble(chunk, img=img):
                return np.concatenate([img[:, :, y:y + p, x:x + p] for y, x in chunk], axis=0)

        chunks = [centers[j:j + tiling.batch] for j in range(0, len(centers), tiling.batch)]

        def run(chunk):
            return stage1_forward(Tensor(assemble(chunk)), W, cfg, prefix).data

        if trace is not None and i == 0:
            first = assemble(chunks[0])
            trace += [(f"{prefix}.patch_batch", first.shape),
                      (f"{prefix}.patch_out", (first.shape[0], c, p * s, p * s))]

        if tiling.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=tiling.workers) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(chunk) for chunk in chunks]

        acc = np.zeros((c, h * s, w * s), dtype=np.float64)
        cnt = np.zeros((1, h * s, w * s), dtype=np.float64)
        for chunk, res in zip(chunks, results):
            for (y, x), patch in zip(chunk, res):
                acc[:, y * s:(y + p) * s, x * s:(x + p) * s] += patch
                cnt[:, y * s:(y + p) * s, x * s:(x + p) * s] += 1.0
        outs.append((acc / cnt).astype(arr.dtype))
    out = Tensor(np.stack(outs, axis=0))
    if trace is not None:
        trace.append((f"{prefix}.output", out.shape))
    return out
