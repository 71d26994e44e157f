"""Little-endian containers for labelled point clouds (PC3D) and clips (PCV4).

PC3D: magic | u16 version | u32 count | u32 points | u8 channels | u32 classes
      | u32 labels[count] | f32 payload[count, points, channels]
PCV4: magic | u16 version | u32 count | u16 frames | u32 points | u8 channels
      | u32 classes | u32 labels[count] | f32 payload[count, frames, points, channels]

Headers are validated, and the implied size compared with the actual byte
count, before anything proportional to the declared sizes is allocated.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from artifact.errors import FormatError

VERSION = 1
CHANNELS = 3
MAX_COUNT = 1 << 24
MAX_POINTS = 1 << 20
MAX_CLASSES = 1 << 16
MAX_PAYLOAD = 1 << 31

_CLOUD_HEAD = struct.Struct("<4sHIIBI")
_CLIP_HEAD = struct.Struct("<4sHIHIBI")


@dataclass
class CloudSet:
    clouds: np.ndarray      # (N, P, 3) float64
    labels: np.ndarray      # (N,) int64
    num_classes: int

    def __len__(self) -> int:
        return self.labels.size


@dataclass
class ClipSet:
    clips: np.ndarray       # (N, T, P, 3) float64
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return self.labels.size


def _check_labels(labels: np.ndarray, count: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    if labels.size != count:
        raise FormatError(f"{labels.size} labels for {count} samples")
    if count and (labels.min() < 0 or labels.max() >= num_classes):
        raise FormatError(f"labels must lie in [0, {num_classes})")
    return labels.astype("<u4")


def encode_clouds(data: CloudSet) -> bytes:
    clouds = np.asarray(data.clouds)
    if clouds.ndim != 3 or clouds.shape[2] != CHANNELS:
        raise FormatError(f"clouds must be (N, P, 3), got {clouds.shape}")
    n, p, c = clouds.shape
    labels = _check_labels(data.labels, n, data.num_classes)
    head = _CLOUD_HEAD.pack(b"PC3D", VERSION, n, p, c, data.num_classes)
    return head + labels.tobytes() + clouds.astype("<f4").tobytes()


def encode_clips(data: ClipSet) -> bytes:
    clips = np.asarray(data.clips)
    if clips.ndim != 4 or clips.shape[3] != CHANNELS:
        raise FormatError(f"clips must be (N, T, P, 3), got {clips.shape}")
    n, t, p, c = clips.shape
    if t < 1 or t > 0xFFFF:
        raise FormatError(f"frame count {t} outside [1, 65535]")
    labels = _check_labels(data.labels, n, data.num_classes)
    head = _CLIP_HEAD.pack(b"PCV4", VERSION, n, t, p, c, data.num_classes)
    return head + labels.tobytes() + clips.astype("<f4").tobytes()


def _validate(magic, want, version, count, points, channels, classes, frames=1):
    if magic != want:
        raise FormatError(f"bad magic {magic!r}, expected {want!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if channels != CHANNELS:
        raise FormatError(f"channels must be {CHANNELS}, got {channels}")
    if frames < 1:
        raise FormatError("clip file declares zero frames")
    if count > MAX_COUNT or points > MAX_POINTS or classes > MAX_CLASSES or classes < 1:
        raise FormatError("header sizes exceed sanity caps")
    payload = count * frames * points * channels * 4
    if payload > MAX_PAYLOAD:
        raise FormatError(f"declared payload of {payload} bytes exceeds the cap")
    return 4 * count + payload


def _decode(blob: bytes, head: struct.Struct, want: bytes):
    if len(blob) < head.size:
        raise FormatError("file shorter than its header")
    fields = head.unpack_from(blob, 0)
    if want == b"PC3D":
        magic, version, count, points, channels, classes = fields
        frames = None
    else:
        magic, version, count, frames, points, channels, classes = fields
    body = _validate(magic, want, version, count, points, channels, classes, 1 if frames is None else frames)
    if len(blob) != head.size + body:
        raise FormatError(f"expected {head.size + body} bytes, file has {len(blob)}")
    labels = np.frombuffer(blob, dtype="<u4", count=count, offset=head.size).astype(np.int64)
    if count and labels.max() >= classes:
        raise FormatError(f"label {labels.max()} not below declared class count {classes}")
    shape = (count, points, channels) if frames is None else (count, frames, points, channels)
    payload = np.frombuffer(blob, dtype="<f4", offset=head.size + 4 * count).astype(np.float64)
    return payload.reshape(shape), labels, classes


def decode_clouds(blob: bytes) -> CloudSet:
    clouds, labels, classes = _decode(blob, _CLOUD_HEAD, b"PC3D")
    return CloudSet(clouds, labels, classes)


def decode_clips(blob: bytes) -> ClipSet:
    clips, labels, classes = _decode(blob, _CLIP_HEAD, b"PCV4")
    return ClipSet(clips, labels, classes)


def _read_checked(path: str | Path, head: struct.Struct, want: bytes) -> bytes:
    # look at the header and the real file size before reading the body
    path = Path(path)
    size = path.stat().st_size
    with path.open("rb") as fh:
        first = fh.read(head.size)
        if len(first) < head.size:
            raise FormatError("file shorter than its header")
        fields = head.unpack(first)
        if want == b"PC3D":
            magic, version, count, points, channels, classes = fields
            frames = 1
        else:
            magic, version, count, frames, points, channels, classes = fields
        body = _validate(magic, want, version, count, points, channels, classes, frames)
        if size != head.size + body:
            raise FormatError(f"expected {head.size + body} bytes, file has {size}")
        return first + fh.read(body)


def write_clouds(path: str | Path, data: CloudSet) -> None:
    Path(path).write_bytes(encode_clouds(data))


def read_clouds(path: str | Path) -> CloudSet:
    return decode_clouds(_read_checked(path, _CLOUD_HEAD, b"PC3D"))


def write_clips(path: str | Path, data: ClipSet) -> None:
    Path(path).write_bytes(encode_clips(data))


def read_clips(path: str | Path) -> ClipSet:
    return decode_clips(_read_checked(path, _CLIP_HEAD, b"PCV4"))


def sniff(path: str | Path) -> str:
    """``"PC3D"`` or ``"PCV4"`` from the first four bytes."""
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
    if magic not in (b"PC3D", b"PCV4"):
        raise FormatError(f"unrecognised magic {magic!r}")
    return magic.decode()
