"""Named parameter container and its ``HTW1`` binary file format.

Layout (all integers little-endian)::

    magic   b"HTW1"
    u32     format version (1)
    u32     tensor count
    repeated per tensor:
        u16     name length, then UTF-8 name bytes
        u8      dtype code (0 = float32, 1 = float64)
        u8      rank
        u32     each dimension
        ...     raw little-endian element data, row-major
    u32     CRC32 of every preceding byte
"""

from __future__ import annotations

import io
import os
import struct
import zlib
from typing import Iterator, Mapping

import numpy as np

from .errors import LoadError, ShapeError
from .tensor import Tensor

MAGIC = b"HTW1"
VERSION = 1
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_OF = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class WeightStore:
    """Ordered mapping from parameter name to :class:`Tensor`."""

    def __init__(self, tensors: Mapping[str, object] | None = None):
        self._t: dict[str, Tensor] = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    # -- mapping protocol -------------------------------------------------
    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._t[name]
        except KeyError:
            raise LoadError(f"missing parameter {name!r}") from None

    def __setitem__(self, name: str, value) -> None:
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value))
        self._t[name] = t

    def __contains__(self, name: object) -> bool:
        return name in self._t

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def __repr__(self) -> str:
        return f"WeightStore({len(self)} tensors, {self.num_elements()} values)"

    def names(self) -> list[str]:
        return list(self._t)

    def items(self):
        return self._t.items()

    def get(self, name: str, default=None):
        return self._t.get(name, default)

    def parameters(self) -> list[Tensor]:
        return list(self._t.values())

    def num_elements(self) -> int:
        return sum(t.size for t in self._t.values())

    # -- bulk helpers -----------------------------------------------------
    def copy(self) -> "WeightStore":
        return WeightStore({k: Tensor(v.data.copy()) for k, v in self._t.items()})

    def astype(self, dtype) -> "WeightStore":
        return WeightStore({k: v.astype(dtype) for k, v in self._t.items()})

    def requires_grad_(self, flag: bool = True) -> "WeightStore":
        for t in self._t.values():
            t.requires_grad = flag
        return self

    def renamed(self, old_prefix: str, new_prefix: str) -> "WeightStore":
        """Copy with every ``old_prefix`` name prefix replaced by ``new_prefix``."""
        out = WeightStore()
        for k, v in self._t.items():
            if k.startswith(old_prefix):
                k = new_prefix + k[len(old_prefix):]
            out[k] = Tensor(v.data.copy())
        return out

    def update(self, other: "WeightStore") -> None:
        for k, v in other.items():
            self[k] = v

    def check_finite(self) -> None:
        for k, v in self._t.items():
            if not np.all(np.isfinite(v.data)):
                raise LoadError(f"parameter {k!r} contains NaN or Inf")

    # -- serialisation ----------------------------------------------------
    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<II", VERSION, len(self._t)))
        for name, t in self._t.items():
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ShapeError(f"parameter name too long: {name[:40]}...")
            code = _CODE_OF.get(t.data.dtype)
            if code is None:
                raise ShapeError(f"parameter {name!r} has unsupported dtype {t.data.dtype}")
            if t.ndim > 255:
                raise ShapeError(f"parameter {name!r} has rank {t.ndim} > 255")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<BB", code, t.ndim))
            buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
            buf.write(np.ascontiguousarray(t.data, dtype=_CODES[code]).tobytes())
        body = buf.getvalue()
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, blob: bytes, dtype=None) -> "WeightStore":
        if len(blob) < 16 or blob[:4] != MAGIC:
            raise LoadError("not an HTW1 weight file (bad magic)")
        body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise LoadError("weight file CRC mismatch (file is corrupt)")
        version, count = struct.unpack_from("<II", body, 4)
        if version != VERSION:
            raise LoadError(f"unsupported weight file version {version}")
        pos = 12
        store = cls()
        try:
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", body, pos)
                pos += 2
                name = body[pos:pos + nlen].decode("utf-8")
                pos += nlen
                code, rank = struct.unpack_from("<BB", body, pos)
                pos += 2
                if code not in _CODES:
                    raise LoadError(f"parameter {name!r}: unknown dtype code {code}")
                dims = struct.unpack_from(f"<{rank}I", body, pos)
                pos += 4 * rank
                nbytes = int(np.prod(dims, dtype=np.int64)) * _CODES[code].itemsize
                if pos + nbytes > len(body):
                    raise LoadError(f"parameter {name!r}: data runs past end of file")
                arr = np.frombuffer(body, dtype=_CODES[code], count=nbytes // _CODES[code].itemsize, offset=pos)
                pos += nbytes
                if name in store:
                    raise LoadError(f"duplicate parameter name {name!r}")
                arr = arr.reshape(dims).astype(arr.dtype.newbyteorder("="))
                if dtype is not None:
                    arr = arr.astype(dtype)
                store[name] = Tensor(arr)
        except struct.error as exc:
            raise LoadError(f"truncated weight file: {exc}") from None
        if pos != len(body):
            raise LoadError(f"{len(body) - pos} trailing bytes before the CRC")
        store.check_finite()
        return store

    def save(self, path: str | os.PathLike) -> None:
        self.check_finite()
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike, dtype=None) -> "WeightStore":
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise LoadError(f"cannot read weight file {os.fspath(path)}: {exc.strerror}") from None
        return cls.from_bytes(blob, dtype=dtype)
