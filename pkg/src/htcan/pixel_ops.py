"""Space/channel rearrangements, window tiling and geometric transforms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar, Union

import numpy as np

from . import ops
from .errors import ShapeError, UsageError
from .tensor import Tensor, record

Array = Union[np.ndarray, Tensor]
T = TypeVar("T")


@dataclass(frozen=True)
class StereoPair:
    """Left/right views with identical ``(n, c, h, w)`` dimensions."""

    left: Array
    right: Array

    def __post_init__(self):
        if tuple(self.left.shape) != tuple(self.right.shape):
            raise ShapeError(f"stereo views differ in shape: {self.left.shape} vs {self.right.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.left.shape)

    def swap(self) -> "StereoPair":
        return StereoPair(self.right, self.left)

    def map(self, fn: Callable) -> "StereoPair":
        return StereoPair(fn(self.left), fn(self.right))


# -- pixel shuffle ------------------------------------------------------------

def _shuffle_np(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    oc = c // (r * r)
    y = x.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y).reshape(n, oc, h * r, w * r)


def _unshuffle_np(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    y = x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x, r: int) -> Tensor:
    """Depth-to-space: ``out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w]``."""
    x = ops._wrap(x)
    if r < 1:
        raise ShapeError(f"shuffle factor must be >= 1, got {r}")
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: channels of {x.shape} not divisible by r^2 = {r * r}")
    if r == 1:
        return ops.reshape(x, x.shape)
    out = _shuffle_np(x.data, r)
    return record("pixel_shuffle", out, (x,), lambda g: (_unshuffle_np(g, r),))


def pixel_unshuffle(x, r: int) -> Tensor:
    """Space-to-depth, the exact inverse of :func:`pixel_shuffle`."""
    x = ops._wrap(x)
    if r < 1:
        raise ShapeError(f"unshuffle factor must be >= 1, got {r}")
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims of {x.shape} not divisible by r = {r}")
    if r == 1:
        return ops.reshape(x, x.shape)
    out = _unshuffle_np(x.data, r)
    return record("pixel_unshuffle", out, (x,), lambda g: (_shuffle_np(g, r),))


# -- windows ------------------------------------------------------------------

def window_partition(x, ws: int) -> tuple[Tensor, tuple[int, int]]:
    """Split ``(n, c, h, w)`` into raster-ordered ``ws`` x ``ws`` token windows.

    Returns ``(windows, (rows, cols))`` with windows shaped
    ``(n * rows * cols, ws * ws, c)``.
    """
    x = ops._wrap(x)
    n, c, h, w = x.shape
    if ws < 1 or h % ws or w % ws:
        raise ShapeError(f"window_partition: {h}x{w} is not divisible by window size {ws}")
    rows, cols = h // ws, w // ws
    t = ops.reshape(x, (n, c, rows, ws, cols, ws))
    t = ops.permute(t, (0, 2, 4, 3, 5, 1))
    return ops.reshape(t, (n * rows * cols, ws * ws, c)), (rows, cols)


def window_reverse(windows, grid: tuple[int, int], ws: int, dims: Sequence[int]) -> Tensor:
    """Inverse of :func:`window_partition`; ``dims`` is ``(n, c, h, w)`` or ``(h, w)``."""
    windows = ops._wrap(windows)
    rows, cols = grid
    h, w = dims[-2:]
    if windows.ndim != 3 or windows.shape[1] != ws * ws or rows * ws != h or cols * ws != w:
        raise ShapeError(f"window_reverse: windows {windows.shape} inconsistent with grid {grid}, ws {ws}, dims {tuple(dims)}")
    b, _, c = windows.shape
    if b % (rows * cols):
        raise ShapeError(f"window_reverse: {b} windows is not a multiple of the {rows}x{cols} grid")
    n = b // (rows * cols)
    t = ops.reshape(windows, (n, rows, cols, ws, ws, c))
    t = ops.permute(t, (0, 5, 1, 3, 2, 4))
    return ops.reshape(t, (n, c, h, w))


# -- geometric transforms -----------------------------------------------------

@dataclass(frozen=True)
class GeomTransform:
    """Flip/rotate/view-swap transform applied as swap -> hflip -> vflip -> rot90."""

    hflip: bool = False
    vflip: bool = False
    rot90: int = 0
    swap_views: bool = False

    def __post_init__(self):
        if self.rot90 not in (0, 1, 2, 3):
            raise UsageError(f"rot90 must be in 0..3, got {self.rot90}")

    def inverse(self) -> "GeomTransform":
        # a single flip conjugates a rotation into its inverse; two flips cancel
        k = self.rot90 if (self.hflip ^ self.vflip) else (-self.rot90) % 4
        return GeomTransform(self.hflip, self.vflip, k, self.swap_views)

    @property
    def is_identity(self) -> bool:
        return not (self.hflip or self.vflip or self.rot90 or self.swap_views)


def _geom_array(x: np.ndarray, t: GeomTransform) -> np.ndarray:
    if t.hflip:
        x = x[..., ::-1]
    if t.vflip:
        x = x[..., ::-1, :]
    if t.rot90:
        x = np.rot90(x, t.rot90, axes=(-2, -1))
    return np.ascontiguousarray(x)


def apply_geom(x, t: GeomTransform):
    """Apply ``t`` to a tensor, array or :class:`StereoPair` (returning the same type)."""
    if isinstance(x, StereoPair):
        if t.swap_views:
            x = x.swap()
        mono = GeomTransform(t.hflip, t.vflip, t.rot90)
        return StereoPair(apply_geom(x.left, mono), apply_geom(x.right, mono))
    if isinstance(x, Tensor):
        return Tensor(_geom_array(x.data, t))
    return _geom_array(np.asarray(x), t)


def mono_group() -> list[GeomTransform]:
    """The eight dihedral transforms: four rotations, each with and without hflip."""
    return [GeomTransform(hflip=f, rot90=k) for k in range(4) for f in (False, True)]


def stereo_group(include_swap: bool = True) -> list[GeomTransform]:
    """Flip/flip/swap combinations; eight members unless swaps are excluded."""
    swaps: Iterable[bool] = (False, True) if include_swap else (False,)
    return [GeomTransform(hflip=h, vflip=v, swap_views=s) for s in swaps for v in (False, True) for h in (False, True)]


# -- multi-patch input --------------------------------------------------------

def _check_center(shape: Sequence[int], center: tuple[int, int], p: int) -> None:
    y, x = center
    h, w = shape[-2:]
    if p < 1:
        raise UsageError(f"patch size must be >= 1, got {p}")
    if y < 0 or x < 0 or y + p > h or x + p > w:
        raise UsageError(f"center patch at {center} with size {p} lies outside the {h}x{w} image")


def _blocks_to_channels(region: np.ndarray, p: int) -> np.ndarray:
    n, c = region.shape[:2]
    blocks = region.reshape(n, c, 3, p, 3, p).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(blocks).reshape(n, 9 * c, p, p)


def pad_for_multi_patch(image: np.ndarray, p: int) -> np.ndarray:
    """Reflect pad by ``p`` on all sides (folding repeatedly for tiny images)."""
    h, w = image.shape[-2:]
    rows = ops.mirror_indices(h, p, p, strict=False)
    cols = ops.mirror_indices(w, p, p, strict=False)
    return image[..., rows, :][..., cols]


def multi_patch_from_padded(padded: np.ndarray, centers: Sequence[tuple[int, int]], p: int) -> np.ndarray:
    """Assemble a batch of multi-patch inputs from an image already padded by ``p``.

    ``padded`` is ``(1, c, h + 2p, w + 2p)``; the result is
    ``(len(centers), 9c, p, p)``.
    """
    regions = [padded[:, :, y:y + 3 * p, x:x + 3 * p] for y, x in centers]
    return _blocks_to_channels(np.concatenate(regions, axis=0), p)


def multi_patch_assemble(image, center: tuple[int, int], p: int) -> Tensor:
    """Pack a center patch and its eight neighbours into ``9c`` channels.

    ``center`` is the top-left corner of the ``p`` x ``p`` center patch. The
    3p x 3p neighbourhood (taken from the reflect-padded image) is split into
    its 3x3 grid of patches; patch ``k = 3*i + j`` fills channels
    ``k*c .. (k+1)*c - 1``, so the raw center patch lands in block 4.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    _check_center(arr.shape, center, p)
    padded = pad_for_multi_patch(arr, p)
    return Tensor(_blocks_to_channels(padded[:, :, center[0]:center[0] + 3 * p, center[1]:center[1] + 3 * p], p))


def patch_grid(length: int, p: int) -> list[int]:
    """Patch start offsets covering ``length``; the last one is shifted to end at the edge."""
    if length < p:
        raise UsageError(f"image dimension {length} is smaller than the patch size {p}")
    starts = list(range(0, length - p + 1, p))
    if starts[-1] + p < length:
        starts.append(length - p)
    return starts
