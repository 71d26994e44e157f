"""Named parameter tensors with freeze flags, accounting, and the ATAW checkpoint."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from artifact.errors import FormatError
from artifact.numcore.tensor import Tape, Var

CHECKPOINT_MAGIC = b"ATAW"
CHECKPOINT_VERSION = 1


@dataclass
class ParamEntry:
    value: np.ndarray
    frozen: bool
    init: str
    buffer: bool = False  # running statistics: never optimised, never counted


class ParamStore:
    """Ordered mapping of parameter name to float64 array plus a freeze mask."""

    def __init__(self) -> None:
        self._entries: dict[str, ParamEntry] = {}

    def add(self, name: str, value, frozen: bool = False, init: str = "", buffer: bool = False) -> None:
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already exists")
        self._entries[name] = ParamEntry(np.array(value, dtype=np.float64), bool(frozen) and not buffer,
                                         init, bool(buffer))

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def get(self, name: str, default=None):
        entry = self._entries.get(name)
        return default if entry is None else entry.value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def entry(self, name: str) -> ParamEntry:
        return self._entries[name]

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._entries if n.startswith(prefix)]

    def trainable_names(self) -> list[str]:
        return [n for n, e in self._entries.items() if not e.frozen and not e.buffer]

    def frozen_names(self) -> list[str]:
        return [n for n, e in self._entries.items() if e.frozen]

    def buffer_names(self) -> list[str]:
        return [n for n, e in self._entries.items() if e.buffer]

    def is_buffer(self, name: str) -> bool:
        return self._entries[name].buffer

    def is_frozen(self, name: str) -> bool:
        return self._entries[name].frozen

    def set_frozen(self, prefix: str, frozen: bool = True) -> None:
        for n in self.names(prefix):
            if not self._entries[n].buffer:
                self._entries[n].frozen = frozen

    def assign(self, name: str, value) -> None:
        entry = self._entries[name]
        if entry.frozen:
            raise PermissionError(f"parameter {name!r} is frozen")
        self._replace(entry, name, value)

    def set_buffer(self, name: str, value) -> None:
        entry = self._entries[name]
        if not entry.buffer:
            raise PermissionError(f"{name!r} is not a buffer")
        self._replace(entry, name, value)

    @staticmethod
    def _replace(entry: ParamEntry, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != entry.value.shape:
            raise ValueError(f"shape change for {name!r}: {entry.value.shape} -> {value.shape}")
        entry.value = value.copy()

    def bind(self, tape: Tape, names: Iterable[str] | None = None,
             include_frozen: bool = False) -> dict[str, Var]:
        """Expose parameters as Vars: selected trainable ones become tape leaves."""
        wanted = set(self.trainable_names() if names is None else names)
        out = {}
        for n, e in self._entries.items():
            if n in wanted and not e.buffer and (include_frozen or not e.frozen):
                out[n] = tape.leaf(e.value, n)
            else:
                out[n] = Var(e.value)
        return out

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for n, e in self._entries.items():
            other.add(n, e.value.copy(), e.frozen, e.init, e.buffer)
        return other

    def snapshot(self, names: Iterable[str] | None = None) -> dict[str, bytes]:
        names = self._entries if names is None else names
        return {n: self._entries[n].value.tobytes() for n in names}


def module_of(name: str) -> str:
    """Accounting bucket: leading name component, e.g. ``pva`` or ``backbone``."""
    return name.split(".", 1)[0]


def count_params(params: ParamStore) -> dict:
    """Element counts; buffers (running statistics) are not parameters."""
    total = trainable = 0
    per_module: dict[str, dict[str, int]] = {}
    for n in params:
        if params.is_buffer(n):
            continue
        size = int(params[n].size)
        bucket = per_module.setdefault(module_of(n), {"total": 0, "trainable": 0, "frozen": 0})
        bucket["total"] += size
        total += size
        if params.is_frozen(n):
            bucket["frozen"] += size
        else:
            bucket["trainable"] += size
            trainable += size
    return {"total": total, "trainable": trainable, "frozen": total - trainable,
            "per_module": per_module}


# checkpoint container -------------------------------------------------------------
# magic "ATAW" | u16 version | u32 record count | records...
# record: u16 name length | utf-8 name | u8 flags | u8 rank | u32 dims[rank] | f64 payload
# flags: bit 0 frozen, bit 1 buffer

def checkpoint_bytes(params: ParamStore) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(params))]
    for n in params:
        e = params.entry(n)
        raw = n.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", int(e.frozen) | (int(e.buffer) << 1), e.value.ndim))
        chunks.append(struct.pack(f"<{e.value.ndim}I", *e.value.shape))
        chunks.append(e.value.astype("<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(params: ParamStore, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def parse_checkpoint(blob: bytes) -> ParamStore:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("checkpoint truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version, count = struct.unpack("<HI", take(6))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    store = ParamStore()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        flags, rank = struct.unpack("<BB", take(2))
        if flags > 3:
            raise FormatError(f"record {name!r} has unknown flags {flags}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        if 8 * size > len(view) - pos:
            raise FormatError(f"record {name!r} declares more data than the file holds")
        payload = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
        if name in store:
            raise FormatError(f"duplicate record {name!r}")
        store.add(name, payload, bool(flags & 1), buffer=bool(flags & 2))
    if pos != len(view):
        raise FormatError("trailing bytes after last checkpoint record")
    return store


def load_checkpoint(path: str | Path) -> ParamStore:
    return parse_checkpoint(Path(path).read_bytes())
