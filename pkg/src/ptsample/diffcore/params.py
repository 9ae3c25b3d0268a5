"""Named parameter storage and the "APSW" checkpoint format.

Layout (little-endian): magic ``b"APSW"``, u16 version, u32 entry count, then
per entry: u16 name length, UTF-8 name, u8 rank, u32 per dim, float64 values.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidArgument
from .tensor import Tensor

MAGIC = b"APSW"
VERSION = 1


class ParamStore:
    """Ordered map name -> Tensor.

    Trainable entries carry gradients; buffers (batchnorm running stats) are
    plain tensors with ``requires_grad=False`` updated in place by the ops.
    Iteration order is insertion order.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._entries: dict[str, Tensor] = {}
        self._buffers: set[str] = set()

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise InvalidArgument(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=trainable, name=name)
        self._entries[name] = t
        if not trainable:
            self._buffers.add(name)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(k, t) for k, t in self._entries.items() if t.requires_grad]

    def num_parameters(self) -> int:
        """Learnable scalars, counted the same whether or not the store is frozen."""
        return int(sum(t.value.size for k, t in self._entries.items() if k not in self._buffers))

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def freeze(self) -> None:
        for t in self._entries.values():
            t.requires_grad = False

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._entries.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        missing = set(self._entries) - set(snap)
        if missing:
            raise InvalidArgument(f"snapshot lacks entries: {sorted(missing)}")
        for k, t in self._entries.items():
            if snap[k].shape != t.value.shape:
                raise InvalidArgument(f"shape mismatch for {k!r}: {snap[k].shape} vs {t.value.shape}")
            t.value[...] = snap[k]

    def astype(self, dtype) -> "ParamStore":
        """Copy of the store with every value cast to ``dtype``."""
        out = ParamStore(dtype)
        for k, t in self._entries.items():
            out.add(k, t.value, trainable=t.requires_grad)
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, t in self._entries.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(t.value).tobytes())
        return h.hexdigest()


def save_checkpoint(path, store: ParamStore) -> None:
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(store))]
    for name, t in store.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", t.value.ndim))
        chunks.append(struct.pack(f"<{t.value.ndim}I", *t.value.shape))
        chunks.append(np.ascontiguousarray(t.value, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    """Parse an APSW file into an ordered ``{name: float64 array}`` dict."""
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated checkpoint while reading {what}", pos)
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected APSW", 0)
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(dims, dtype=np.int64))
        vals = np.frombuffer(take(8 * size, f"values of {name!r}"), dtype="<f8")
        out[name] = vals.reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise FormatError("trailing bytes after last entry", pos)
    return out


def load_checkpoint(path, store: ParamStore) -> ParamStore:
    """Fill an existing store (same names and shapes) from an APSW file."""
    arrays = read_checkpoint(path)
    if list(arrays) != list(store):
        raise InvalidArgument(f"checkpoint {path} does not match the model's parameter names")
    store.restore({k: v.astype(store.dtype) for k, v in arrays.items()})
    return store
