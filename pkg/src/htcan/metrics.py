"""Bicubic degradation, PSNR/SSIM and the stereo evaluation protocol.

The evaluation protocol scores the left view with its 64 leftmost columns
removed, and the pair as the mean of the two uncropped per-view scores.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, UsageError
from .pixel_ops import StereoPair
from .tensor import Tensor

CUBIC_A = -0.5
LEFT_CROP = 64
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA = (0.299, 0.587, 0.114)


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# -- bicubic ------------------------------------------------------------------

def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def phase_weights(offset: float, factor: float) -> tuple[np.ndarray, np.ndarray]:
    """Tap offsets and normalised weights for a sample ``offset`` past a source pixel.

    The kernel is stretched by ``factor`` (anti-aliasing when downsampling).
    """
    width = 2.0 * max(factor, 1.0)
    taps = np.arange(math.floor(-width - offset) + 1, math.ceil(width - offset))
    w = cubic((taps + offset) / max(factor, 1.0))
    return taps, w / w.sum()


def downsample_taps(n: int, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Clamped source indices ``(out, taps)`` and the shared symmetric weights."""
    out_n = n // factor
    centers = (np.arange(out_n) + 0.5) * factor - 0.5
    base = math.floor(centers[0])
    taps, w = phase_weights(centers[0] - base, float(factor))
    # every output shares the phase of output 0 for integer factors
    idx = (base + (np.arange(out_n) * factor)[:, None]) - taps[None, :]
    return np.clip(idx[:, ::-1], 0, n - 1), w[::-1]


def _resample_axis(x: np.ndarray, factor: int, axis: int) -> np.ndarray:
    idx, w = downsample_taps(x.shape[axis], factor)
    t = len(w)
    out = None
    # symmetric taps are summed pairwise so mirrored inputs give mirrored bits
    for k in range(t // 2):
        term = w[k] * (np.take(x, idx[:, k], axis=axis) + np.take(x, idx[:, t - 1 - k], axis=axis))
        out = term if out is None else out + term
    if t % 2:
        term = w[t // 2] * np.take(x, idx[:, t // 2], axis=axis)
        out = term if out is None else out + term
    return out


def bicubic_downsample(image, factor: int):
    """Separable anti-aliased cubic downsampling (a = -0.5, cell-centred, clamped edges)."""
    arr = _arr(image)
    if factor < 1:
        raise ShapeError(f"downsampling factor must be >= 1, got {factor}")
    h, w = arr.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"image {h}x{w} is not divisible by factor {factor}")
    out = arr.astype(np.float64)
    if factor > 1:
        out = _resample_axis(out, factor, out.ndim - 2)
        out = _resample_axis(out, factor, out.ndim - 1)
    out = out.astype(arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64)
    return Tensor(out) if isinstance(image, Tensor) else out


# -- PSNR / SSIM --------------------------------------------------------------

def psnr(a, b, mode: str = "joint") -> float:
    """PSNR in dB for images in [0, 1]; identical inputs give ``inf``.

    ``mode="joint"`` uses the MSE over the full array, ``"per_channel"``
    averages the per-channel PSNRs.
    """
    a, b = _arr(a).astype(np.float64), _arr(b).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes differ: {a.shape} vs {b.shape}")
    if mode == "per_channel":
        chans = _chw(a).shape[0]
        return float(np.mean([psnr(_chw(a)[i], _chw(b)[i]) for i in range(chans)]))
    if mode != "joint":
        raise UsageError(f"unknown psnr mode {mode!r}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _chw(x: np.ndarray) -> np.ndarray:
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ShapeError(f"expected a single image, got batch of {x.shape[0]}")
        return x[0]
    if x.ndim == 2:
        return x[None]
    return x


def to_luma(x: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of a ``(3, h, w)`` image; single channels pass through."""
    x = _chw(x)
    if x.shape[0] == 1:
        return x[0]
    if x.shape[0] != 3:
        raise ShapeError(f"luma needs 1 or 3 channels, got {x.shape[0]}")
    return LUMA[0] * x[0] + LUMA[1] * x[1] + LUMA[2] * x[2]


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    t = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(t, k, axis=1) @ g


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Local SSIM of two 2-D images over every fully-contained 11x11 window."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise UsageError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    g = gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, mode: str = "luma") -> float:
    """Mean SSIM (Gaussian 11x11, sigma 1.5, K1 0.01, K2 0.03, range 1).

    RGB inputs are reduced to luma first (``mode="luma"``) or scored per
    channel and averaged (``mode="rgb_mean"``).
    """
    a, b = _chw(_arr(a).astype(np.float64)), _chw(_arr(b).astype(np.float64))
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes differ: {a.shape} vs {b.shape}")
    if mode == "luma":
        return float(ssim_map(to_luma(a), to_luma(b)).mean())
    if mode == "rgb_mean":
        return float(np.mean([ssim_map(a[i], b[i]).mean() for i in range(a.shape[0])]))
    raise UsageError(f"unknown ssim mode {mode!r}")


# -- evaluation protocol -------------------------------------------------------

@dataclass
class EvalRow:
    name: str
    left_psnr: float | None
    left_ssim: float | None
    pair_psnr: float
    pair_ssim: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    @staticmethod
    def _mean(values: Sequence[float | None]) -> float | None:
        vals = [v for v in values if v is not None]
        if not vals:
            return None
        return math.fsum(vals) / len(vals) if all(math.isfinite(v) for v in vals) else float(np.mean(vals))

    @property
    def means(self) -> dict[str, float | None]:
        return {
            "left_psnr": self._mean([r.left_psnr for r in self.rows]),
            "left_ssim": self._mean([r.left_ssim for r in self.rows]),
            "pair_psnr": self._mean([r.pair_psnr for r in self.rows]),
            "pair_ssim": self._mean([r.pair_ssim for r in self.rows]),
        }

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["name", "left_psnr", "left_ssim", "pair_psnr", "pair_ssim"])
            for r in self.rows:
                wr.writerow([r.name, _fmt(r.left_psnr), _fmt(r.left_ssim), _fmt(r.pair_psnr), _fmt(r.pair_ssim)])
            m = self.means
            wr.writerow(["MEAN", _fmt(m["left_psnr"]), _fmt(m["left_ssim"]), _fmt(m["pair_psnr"]), _fmt(m["pair_ssim"])])

    def table(self) -> str:
        """Fixed-width text table with Left and (Left+Right)/2 column groups."""
        width = max([len(r.name) for r in self.rows] + [6])
        head = f"{'Image':<{width}} | {'Left':^17} | {'(Left+Right)/2':^17}"
        lines = [head, "-" * len(head)]

        def cell(p, s):
            if p is None:
                return f"{'n/a':^17}"
            return f"{_fmt(p, 2):>7}/{_fmt(s, 4):<9}"

        for r in self.rows:
            lines.append(f"{r.name:<{width}} | {cell(r.left_psnr, r.left_ssim)} | {cell(r.pair_psnr, r.pair_ssim)}")
        m = self.means
        lines.append("-" * len(head))
        lines.append(f"{'MEAN':<{width}} | {cell(m['left_psnr'], m['left_ssim'])} | {cell(m['pair_psnr'], m['pair_ssim'])}")
        return "\n".join(lines)


def _fmt(v: float | None, digits: int | None = None) -> str:
    if v is None:
        return "NA"
    if math.isinf(v):
        return "inf"
    return repr(float(v)) if digits is None else f"{v:.{digits}f}"


def evaluate_pair(name: str, sr: StereoPair, gt: StereoPair, psnr_mode: str = "joint",
                  ssim_mode: str = "luma") -> EvalRow:
    srl, srr = _chw(_arr(sr.left)), _chw(_arr(sr.right))
    gtl, gtr = _chw(_arr(gt.left)), _chw(_arr(gt.right))
    if srl.shape != gtl.shape or srr.shape != gtr.shape:
        raise ShapeError(f"{name}: SR {srl.shape}/{srr.shape} vs GT {gtl.shape}/{gtr.shape}")
    width = srl.shape[-1]
    left_p = left_s = None
    if width > LEFT_CROP:
        cl, cg = srl[..., LEFT_CROP:], gtl[..., LEFT_CROP:]
        left_p = psnr(cl, cg, psnr_mode)
        if width - LEFT_CROP >= SSIM_WINDOW and cl.shape[-2] >= SSIM_WINDOW:
            left_s = ssim(cl, cg, ssim_mode)
    pair_p = (psnr(srl, gtl, psnr_mode) + psnr(srr, gtr, psnr_mode)) / 2.0
    pair_s = (ssim(srl, gtl, ssim_mode) + ssim(srr, gtr, ssim_mode)) / 2.0
    return EvalRow(name, left_p, left_s, pair_p, pair_s)


def evaluate_protocol(sr_pairs: Mapping[str, StereoPair], gt_pairs: Mapping[str, StereoPair],
                      psnr_mode: str = "joint", ssim_mode: str = "luma") -> EvalReport:
    """Score every SR pair against its ground truth, rows ordered by name."""
    missing = set(sr_pairs) ^ set(gt_pairs)
    if missing:
        raise UsageError(f"SR and GT sets differ in: {', '.join(sorted(missing))}")
    return EvalReport([evaluate_pair(k, sr_pairs[k], gt_pairs[k], psnr_mode, ssim_mode)
                       for k in sorted(sr_pairs)])
