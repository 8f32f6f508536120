"""PNG input/output and stereo-pair directory discovery.

Images live in memory as float ``(1, 3, h, w)`` arrays in [0, 1]; the only
quantization happens in :func:`write_png`.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .ensemble import quantize
from .errors import LoadError, UsageError
from .pixel_ops import StereoPair

_PAIR_RE = re.compile(r"^(?P<stem>.+)_(?P<view>[LR])\.png$", re.IGNORECASE)


def read_png(path: str | os.PathLike, dtype=np.float32) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise LoadError(f"{path}: expected a PNG file, got {im.format}")
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError as exc:
        raise LoadError(f"{path}: no such file") from exc
    except (UnidentifiedImageError, OSError) as exc:
        if isinstance(exc, LoadError):
            raise
        raise LoadError(f"{path}: cannot decode image: {exc}") from exc
    return (rgb.transpose(2, 0, 1)[None].astype(np.float64) / 255.0).astype(dtype)


def to_uint8_hwc(image) -> np.ndarray:
    a = np.asarray(getattr(image, "data", image))
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise UsageError(f"can only write a single image, got batch of {a.shape[0]}")
        a = a[0]
    if a.ndim != 3 or a.shape[0] != 3:
        raise UsageError(f"expected a (3, h, w) image, got {a.shape}")
    return quantize(a).transpose(1, 2, 0)


def write_png(path: str | os.PathLike, image) -> None:
    data = to_uint8_hwc(image)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.ascontiguousarray(data), "RGB").save(path, format="PNG")
    except OSError as exc:
        raise LoadError(f"{path}: cannot write image: {exc}") from exc


def read_pair(left: str | os.PathLike, right: str | os.PathLike, dtype=np.float32) -> StereoPair:
    lo, ro = read_png(left, dtype), read_png(right, dtype)
    if lo.shape != ro.shape:
        raise UsageError(f"left {left} and right {right} differ in size: {lo.shape[2:]} vs {ro.shape[2:]}")
    return StereoPair(lo, ro)


def find_pairs(directory: str | os.PathLike) -> dict[str, tuple[Path, Path]]:
    """Map ``stem`` to the ``stem_L.png`` / ``stem_R.png`` files of a directory."""
    d = Path(directory)
    if not d.is_dir():
        raise LoadError(f"{d}: not a directory")
    views: dict[str, dict[str, Path]] = {}
    for f in sorted(d.iterdir()):
        m = _PAIR_RE.match(f.name)
        if m and f.is_file():
            views.setdefault(m["stem"], {})[m["view"].upper()] = f
    incomplete = sorted(k for k, v in views.items() if len(v) != 2)
    if incomplete:
        raise UsageError(f"{d}: missing left or right view for {', '.join(incomplete)}")
    return {k: (v["L"], v["R"]) for k, v in sorted(views.items())}


def read_pairs(directory: str | os.PathLike, dtype=np.float64) -> dict[str, StereoPair]:
    return {k: read_pair(l, r, dtype) for k, (l, r) in find_pairs(directory).items()}
