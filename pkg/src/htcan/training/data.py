"""Procedural stereo training data.

Each scene is a random mix of coloured sinusoid gratings, soft discs and
hard-edged rectangles rendered wider than the views. The left view is a
crop shifted by a per-scene disparity from the right view, so matching
content lies on the same rows. LR views are bicubic downsamplings of HR.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..metrics import bicubic_downsample
from ..pixel_ops import StereoPair


@dataclass(frozen=True)
class SyntheticSpec:
    pairs: int = 16
    hr_height: int = 64
    hr_width: int = 128
    scale: int = 4
    max_disparity: int = 8
    seed: int = 0


def render_scene(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """One ``(3, h, w)`` float64 texture in [0, 1]."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.empty((3, h, w))
    img[:] = rng.uniform(0.2, 0.8, size=(3, 1, 1))
    for _ in range(int(rng.integers(2, 5))):
        freq = rng.uniform(0.03, 0.35)
        theta = rng.uniform(0, np.pi)
        wave = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + rng.uniform(0, 2 * np.pi))
        img += rng.uniform(-0.2, 0.2, size=(3, 1, 1)) * wave
    for _ in range(int(rng.integers(2, 6))):
        y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(3, h / 3)
        disc = np.exp(-((yy - y0) ** 2 + (xx - x0) ** 2) / (2 * r * r))
        img += rng.uniform(-0.3, 0.3, size=(3, 1, 1)) * disc
    for _ in range(int(rng.integers(2, 6))):
        y0, x0 = int(rng.integers(0, h)), int(rng.integers(0, w))
        rh, rw = int(rng.integers(4, h // 2)), int(rng.integers(4, w // 3))
        img[:, y0:y0 + rh, x0:x0 + rw] = rng.uniform(0, 1, size=(3, 1, 1))
    return np.clip(img, 0.0, 1.0)


def make_stereo_pair(rng: np.random.Generator, h: int, w: int, max_disparity: int) -> StereoPair:
    d = int(rng.integers(1, max_disparity + 1))
    scene = render_scene(rng, h, w + max_disparity)
    return StereoPair(scene[:, :, d:d + w].copy(), scene[:, :, :w].copy())


@dataclass(frozen=True)
class StereoDataset:
    """Parallel lists of HR pairs and their bicubic LR pairs, each view ``(3, h, w)``."""

    hr: list[StereoPair]
    lr: list[StereoPair]

    def __len__(self) -> int:
        return len(self.hr)


def synthetic_dataset(spec: SyntheticSpec = SyntheticSpec(), dtype=np.float32) -> StereoDataset:
    rng = np.random.default_rng(spec.seed)
    hr, lr = [], []
    for _ in range(spec.pairs):
        pair = make_stereo_pair(rng, spec.hr_height, spec.hr_width, spec.max_disparity)
        low = pair.map(lambda v: np.clip(bicubic_downsample(v, spec.scale), 0.0, 1.0))
        hr.append(pair.map(lambda v: v.astype(dtype)))
        lr.append(low.map(lambda v: v.astype(dtype)))
    return StereoDataset(hr, lr)
