"""Paired LR/HR augmentation for mono and stereo training samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import ConfigError
from ..pixel_ops import GeomTransform, StereoPair, apply_geom

Images = Union[np.ndarray, StereoPair]


@dataclass(frozen=True)
class AugmentConfig:
    channel_shuffle: bool = False
    hflip: bool = False
    vflip: bool = False
    rotation: bool = False
    mixup: bool = False
    mixup_alpha: float = 1.2

    def __post_init__(self):
        if self.mixup and self.mixup_alpha <= 0:
            raise ConfigError(f"mixup_alpha must be positive, got {self.mixup_alpha}")

    @classmethod
    def stage1(cls) -> "AugmentConfig":
        return cls(channel_shuffle=True, hflip=True, vflip=True, rotation=True, mixup=True)

    @classmethod
    def stage2(cls) -> "AugmentConfig":
        return cls(channel_shuffle=True, hflip=True, vflip=True)


@dataclass(frozen=True)
class TrainSample:
    """Aligned low- and high-resolution images, ``(c, h, w)`` arrays or stereo pairs of them."""

    lr: Images
    hr: Images

    @property
    def stereo(self) -> bool:
        return isinstance(self.lr, StereoPair)


@dataclass(frozen=True)
class AugmentDraw:
    perm: tuple[int, ...] | None
    transform: GeomTransform


def _map(x: Images, fn) -> Images:
    return x.map(fn) if isinstance(x, StereoPair) else fn(x)


def permute_channels(x: Images, perm) -> Images:
    idx = np.asarray(perm)
    return _map(x, lambda a: np.ascontiguousarray(np.take(a, idx, axis=-3)))


def draw(cfg: AugmentConfig, rng: np.random.Generator, stereo: bool, channels: int = 3) -> AugmentDraw:
    """Sample one random transform. A stereo hflip always comes with a view swap."""
    if stereo and cfg.rotation:
        raise ConfigError("rotation would break scanline alignment of stereo samples")
    perm = tuple(int(i) for i in rng.permutation(channels)) if cfg.channel_shuffle else None
    h = bool(cfg.hflip and rng.random() < 0.5)
    v = bool(cfg.vflip and rng.random() < 0.5)
    k = int(rng.integers(4)) if cfg.rotation else 0
    return AugmentDraw(perm, GeomTransform(hflip=h, vflip=v, rot90=k, swap_views=h and stereo))


def apply_draw(sample: TrainSample, d: AugmentDraw) -> TrainSample:
    lr, hr = sample.lr, sample.hr
    if d.perm is not None:
        lr, hr = permute_channels(lr, d.perm), permute_channels(hr, d.perm)
    if not d.transform.is_identity:
        lr, hr = apply_geom(lr, d.transform), apply_geom(hr, d.transform)
    return TrainSample(lr, hr)


def mixup(a: TrainSample, b: TrainSample, lam: float) -> TrainSample:
    """Blend ``lam * a + (1 - lam) * b`` on both resolutions."""
    if lam == 1.0:
        return a

    def blend(x, y):
        if isinstance(x, StereoPair):
            return StereoPair(blend(x.left, y.left), blend(x.right, y.right))
        return (lam * x + (1.0 - lam) * y).astype(x.dtype)

    return TrainSample(blend(a.lr, b.lr), blend(a.hr, b.hr))


def augment(sample: TrainSample, cfg: AugmentConfig, rng: np.random.Generator,
            partner: TrainSample | None = None) -> TrainSample:
    """Apply one random transform identically to LR and HR, then optionally mix with ``partner``."""
    channels = (sample.lr.left if sample.stereo else sample.lr).shape[-3]
    out = apply_draw(sample, draw(cfg, rng, sample.stereo, channels))
    if cfg.mixup and partner is not None:
        out = mixup(out, partner, float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha)))
    return out
