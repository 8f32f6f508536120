"""Stage 2/3: stereo enhancement with gate blocks and scanline cross-attention.

Both views are pixel-unshuffled by ``u``, embedded by a shared 3x3 conv, run
through ``blocks`` NAF blocks (weights shared across views) with a stereo
cross-attention module after every ``scam_every`` blocks, reconstructed by a
3x3 conv and pixel shuffle, and added back onto the stage input. Output dims
equal input dims.

Stage 3 is this same code with the ``stage3`` parameter prefix.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from . import init as initializers
from . import ops
from .errors import ConfigError, ShapeError
from .pixel_ops import StereoPair, pixel_shuffle, pixel_unshuffle
from .stage1 import config_from_dict, conv3, norm, pointwise
from .tensor import Tensor, resolve_dtype
from .weights import WeightStore


@dataclass(frozen=True)
class Stage2Config:
    channels: int = 128
    blocks: int = 128
    unshuffle: int = 4
    scam_every: int = 2
    dw_expansion: int = 2
    ffn_expansion: int = 2
    img_channels: int = 3
    tied_views: bool = False

    @classmethod
    def full(cls, **overrides) -> "Stage2Config":
        return cls(**{**dict(channels=128, blocks=128, unshuffle=4, scam_every=2), **overrides})

    @classmethod
    def tiny(cls, **overrides) -> "Stage2Config":
        return cls(**{**dict(channels=8, blocks=4, unshuffle=2, scam_every=2), **overrides})

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Stage2Config":
        return config_from_dict(cls, data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.unshuffle < 1 or self.blocks < 1 or self.scam_every < 1:
            raise ConfigError("unshuffle, blocks and scam_every must all be >= 1")
        if self.channels < 1 or self.dw_expansion < 1 or self.ffn_expansion < 1:
            raise ConfigError("channels and expansions must be >= 1")
        if (self.channels * self.dw_expansion) % 2 or (self.channels * self.ffn_expansion) % 2:
            raise ConfigError("expanded channel counts must be even for the simple gate")

    @property
    def scam_after(self) -> list[int]:
        """Indices of the blocks followed by a cross-attention module."""
        return [i for i in range(self.blocks) if (i + 1) % self.scam_every == 0]


def param_layout(cfg: Stage2Config, prefix: str = "stage2") -> dict[str, tuple[tuple[int, ...], str]]:
    cfg.validate()
    C, u = cfg.channels, cfg.unshuffle
    dw, ffn = C * cfg.dw_expansion, C * cfg.ffn_expansion
    cin = cfg.img_channels * u * u
    L: dict = {
        f"{prefix}.intro.weight": ((C, cin, 3, 3), "conv"),
        f"{prefix}.intro.bias": ((C,), "zeros"),
    }
    for b in range(cfg.blocks):
        bp = f"{prefix}.b{b}"
        L.update({
            f"{bp}.norm1.weight": ((C,), "ones"), f"{bp}.norm1.bias": ((C,), "zeros"),
            f"{bp}.conv1.weight": ((dw, C), "conv"), f"{bp}.conv1.bias": ((dw,), "zeros"),
            f"{bp}.conv2.weight": ((dw, 1, 3, 3), "conv"), f"{bp}.conv2.bias": ((dw,), "zeros"),
            f"{bp}.sca.weight": ((dw // 2, dw // 2), "conv"), f"{bp}.sca.bias": ((dw // 2,), "zeros"),
            f"{bp}.conv3.weight": ((C, dw // 2), "conv"), f"{bp}.conv3.bias": ((C,), "zeros"),
            f"{bp}.beta": ((C,), "zeros"),
            f"{bp}.norm2.weight": ((C,), "ones"), f"{bp}.norm2.bias": ((C,), "zeros"),
            f"{bp}.conv4.weight": ((ffn, C), "conv"), f"{bp}.conv4.bias": ((ffn,), "zeros"),
            f"{bp}.conv5.weight": ((C, ffn // 2), "conv"), f"{bp}.conv5.bias": ((C,), "zeros"),
            f"{bp}.gamma": ((C,), "zeros"),
        })
    sides = ("l",) if cfg.tied_views else ("l", "r")
    for b in cfg.scam_after:
        sp = f"{prefix}.scam{b}"
        for side in sides:
            L.update({
                f"{sp}.norm_{side}.weight": ((C,), "ones"), f"{sp}.norm_{side}.bias": ((C,), "zeros"),
                f"{sp}.{side}_proj1.weight": ((C, C), "conv"), f"{sp}.{side}_proj1.bias": ((C,), "zeros"),
                f"{sp}.{side}_proj2.weight": ((C, C), "conv"), f"{sp}.{side}_proj2.bias": ((C,), "zeros"),
                f"{sp}.scale_{side}": ((C,), "zeros"),
            })
    L[f"{prefix}.recon.weight"] = ((cin, C, 3, 3), "zeros")
    L[f"{prefix}.recon.bias"] = ((cin,), "zeros")
    return L


def init_weights(cfg: Stage2Config, seed: int = 0, prefix: str = "stage2", dtype=None) -> WeightStore:
    rng = np.random.default_rng(seed)
    dt = resolve_dtype(dtype)
    store = WeightStore()
    for name, (shape, kind) in param_layout(cfg, prefix).items():
        store[name] = Tensor(initializers.make(kind, rng, shape).astype(dt))
    return store


def check_weights(weights: WeightStore, cfg: Stage2Config, prefix: str = "stage2") -> None:
    for name, (shape, _) in param_layout(cfg, prefix).items():
        t = weights[name]
        if tuple(t.shape) != shape:
            raise ShapeError(f"parameter {name!r} has shape {t.shape}, expected {shape}")


def _channel(p) -> Tensor:
    return ops.reshape(p, (1, p.shape[0], 1, 1))


def simple_gate(x) -> Tensor:
    """Split channels in half and multiply the halves."""
    x = ops._wrap(x)
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"simple_gate needs an even channel count, got {c}")
    a = ops.getitem(x, (slice(None), slice(0, c // 2)))
    b = ops.getitem(x, (slice(None), slice(c // 2, c)))
    return ops.mul(a, b)


def naf_block_forward(x, W: WeightStore, prefix: str) -> Tensor:
    """``y = x + beta * branch1(x)``; ``out = y + gamma * branch2(y)``."""
    x = ops._wrap(x)
    t = pointwise(norm(x, W, f"{prefix}.norm1"), W, f"{prefix}.conv1")
    dw = W[f"{prefix}.conv2.weight"]
    t = ops.conv2d(t, dw, W[f"{prefix}.conv2.bias"], padding=1, groups=dw.shape[0])
    t = simple_gate(t)
    t = ops.mul(t, pointwise(ops.mean(t, axis=(2, 3), keepdims=True), W, f"{prefix}.sca"))
    t = pointwise(t, W, f"{prefix}.conv3")
    y = ops.add(x, ops.mul(t, _channel(W[f"{prefix}.beta"])))
    t = pointwise(norm(y, W, f"{prefix}.norm2"), W, f"{prefix}.conv4")
    t = pointwise(simple_gate(t), W, f"{prefix}.conv5")
    return ops.add(y, ops.mul(t, _channel(W[f"{prefix}.gamma"])))


def scam_forward(fl, fr, W: WeightStore, prefix: str, tied: bool = False) -> tuple[Tensor, Tensor]:
    """Bidirectional cross-attention restricted to matching rows of the two views.

    One score matrix ``S = Q_L K_R^T / sqrt(C)`` per scanline; the left view
    attends with ``softmax(S)``, the right view with ``softmax(S^T)``.
    """
    fl, fr = ops._wrap(fl), ops._wrap(fr)
    if fl.shape != fr.shape:
        raise ShapeError(f"scam: view features differ in shape: {fl.shape} vs {fr.shape}")
    n, c, h, w = fl.shape
    rs = "l" if tied else "r"
    q_l = pointwise(norm(fl, W, f"{prefix}.norm_l"), W, f"{prefix}.l_proj1")
    k_r = pointwise(norm(fr, W, f"{prefix}.norm_{rs}"), W, f"{prefix}.{rs}_proj1")
    v_l = pointwise(fl, W, f"{prefix}.l_proj2")
    v_r = pointwise(fr, W, f"{prefix}.{rs}_proj2")

    def rows(t):  # (n, c, h, w) -> (n, h, w, c)
        return ops.permute(t, (0, 2, 3, 1))

    scores = ops.mul(ops.matmul(rows(q_l), ops.permute(k_r, (0, 2, 1, 3))), 1.0 / math.sqrt(c))
    r2l = ops.matmul(ops.softmax_lastdim(scores), rows(v_r))
    l2r = ops.matmul(ops.softmax_lastdim(ops.transpose(scores, -1, -2)), rows(v_l))
    r2l = ops.mul(ops.permute(r2l, (0, 3, 1, 2)), _channel(W[f"{prefix}.scale_l"]))
    l2r = ops.mul(ops.permute(l2r, (0, 3, 1, 2)), _channel(W[f"{prefix}.scale_{rs}"]))
    return ops.add(fl, r2l), ops.add(fr, l2r)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def stage2_forward(pair: StereoPair, W: WeightStore, cfg: Stage2Config, prefix: str = "stage2",
                   pad: bool = False, trace: list | None = None) -> StereoPair:
    """Enhance a stereo pair of ``(n, c, h, w)`` views; returns a pair of the same dims.

    Dims must be multiples of ``cfg.unshuffle`` unless ``pad`` is set, in which
    case the views are reflect-padded up to the next multiple and cropped back.
    ``trace`` collects ``(label, shape)`` entries for the intermediate maps.
    """
    left, right = _as_tensor(pair.left), _as_tensor(pair.right)
    if left.ndim != 4 or left.shape[1] != cfg.img_channels:
        raise ShapeError(f"{prefix} expects (n, {cfg.img_channels}, h, w) views, got {left.shape}")
    u = cfg.unshuffle
    h, w = left.shape[2:]
    ph, pw = (-h) % u, (-w) % u
    if (ph or pw) and not pad:
        raise ShapeError(f"{prefix}: view dims {h}x{w} are not multiples of unshuffle factor {u}")
    if ph or pw:
        left = ops.reflect_pad2d(left, (0, pw, 0, ph), strict=False)
        right = ops.reflect_pad2d(right, (0, pw, 0, ph), strict=False)
    n = left.shape[0]
    both = ops.concat([left, right], axis=0)
    unshuffled = pixel_unshuffle(both, u)
    feats = ops.conv2d(unshuffled, W[f"{prefix}.intro.weight"], W[f"{prefix}.intro.bias"], padding=1)
    scams = set(cfg.scam_after)
    for b in range(cfg.blocks):
        feats = naf_block_forward(feats, W, f"{prefix}.b{b}")
        if b in scams:
            fl = ops.getitem(feats, slice(0, n))
            fr = ops.getitem(feats, slice(n, 2 * n))
            fl, fr = scam_forward(fl, fr, W, f"{prefix}.scam{b}", tied=cfg.tied_views)
            feats = ops.concat([fl, fr], axis=0)
    recon = conv3(feats, W, f"{prefix}.recon")
    out = ops.add(pixel_shuffle(recon, u), both)
    if trace is not None:
        trace += [(f"{prefix}.unshuffle", unshuffled.shape), (f"{prefix}.features", feats.shape),
                  (f"{prefix}.recon", recon.shape), (f"{prefix}.output", out.shape)]
    if ph or pw:
        out = ops.getitem(out, (slice(None), slice(None), slice(0, h), slice(0, w)))
    return StereoPair(ops.getitem(out, slice(0, n)), ops.getitem(out, slice(n, 2 * n)))
