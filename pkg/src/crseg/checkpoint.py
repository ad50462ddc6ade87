"""Binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"CRN1"
    u32     format version (currently 1)
    u32     class count K
    u32     number of channel widths, then that many u32 widths
    u32     number of blobs
    per blob:
        u16  name length, then UTF-8 name
        u8   ndim, then ndim x u32 shape
        f32  payload, prod(shape) little-endian entries

Integer state (batch-norm step counters) is stored as f32; the values are
small counts, so the cast is exact and round trips are bit-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .model import SegModel, HEAD_NAMES

MAGIC = b"CRN1"
VERSION = 1


class CheckpointError(Exception):
    """Malformed checkpoint file."""


def _pack_blob(name: str, array: np.ndarray) -> bytes:
    # ascontiguousarray would promote 0-dim scalars to 1-d
    data = np.asarray(array, dtype="<f4", order="C")
    raw = name.encode("utf-8")
    parts = [struct.pack("<H", len(raw)), raw, struct.pack("<B", data.ndim)]
    parts += [struct.pack("<I", d) for d in data.shape]
    parts.append(data.tobytes())
    return b"".join(parts)


def _state_blobs(model: SegModel, prefix: str = "") -> list:
    return [(prefix + key, value.detach().cpu().contiguous().numpy())
            for key, value in model.state_dict().items()]


def save_checkpoint(path, model: SegModel, teacher: SegModel | None = None):
    """Write the student (and optionally teacher, prefixed "teacher/")."""
    blobs = _state_blobs(model)
    if teacher is not None:
        blobs += _state_blobs(teacher, prefix="teacher/")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, model.num_classes,
                             len(model.channels)))
        for c in model.channels:
            fh.write(struct.pack("<I", c))
        fh.write(struct.pack("<I", len(blobs)))
        for name, array in blobs:
            fh.write(_pack_blob(name, array))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"{self.path}: truncated at byte {self.pos} "
                f"(needed {n} more, have {len(self.buf) - self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path):
    """Parse a checkpoint into (num_classes, channels, {name: f32 array})."""
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0")
    version, num_classes, n_ch = reader.unpack("<III")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    channels = tuple(reader.unpack("<I")[0] for _ in range(n_ch))
    (n_blobs,) = reader.unpack("<I")
    blobs = {}
    for _ in range(n_blobs):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = tuple(reader.unpack("<I")[0] for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(reader.take(4 * count), dtype="<f4")
        blobs[name] = data.reshape(shape).copy()
    if reader.pos != len(reader.buf):
        raise CheckpointError(
            f"{path}: {len(reader.buf) - reader.pos} trailing bytes "
            f"at byte {reader.pos}")
    return num_classes, channels, blobs


def _load_into(model: SegModel, blobs: dict):
    state = model.state_dict()
    missing = set(state) - set(blobs)
    if missing:
        raise CheckpointError(f"missing blobs: {sorted(missing)[:4]}")
    converted = {}
    for key, ref in state.items():
        arr = blobs[key]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(
                f"shape mismatch for {key}: file {tuple(arr.shape)} "
                f"vs model {tuple(ref.shape)}")
        converted[key] = torch.from_numpy(arr).to(ref.dtype)
    model.load_state_dict(converted)


def load_checkpoint(path):
    """Rebuild the student model (and teacher, if stored) from a file.

    Returns (model, teacher_or_None). Head set is inferred from blob names,
    so checkpoints written after discarding the auxiliary heads load back
    without them.
    """
    num_classes, channels, blobs = read_checkpoint(path)
    student_blobs = {k: v for k, v in blobs.items()
                     if not k.startswith("teacher/")}
    teacher_blobs = {k[len("teacher/"):]: v for k, v in blobs.items()
                     if k.startswith("teacher/")}
    heads = tuple(name for name in HEAD_NAMES
                  if any(k.startswith(f"heads.{name}.") for k in student_blobs))
    model = SegModel(channels=channels, num_classes=num_classes, heads=heads)
    model = model.to(memory_format=torch.channels_last)
    _load_into(model, student_blobs)

    teacher = None
    if teacher_blobs:
        teacher = SegModel(channels=channels, num_classes=num_classes,
                           heads=("normal",))
        teacher = teacher.to(memory_format=torch.channels_last)
        _load_into(teacher, teacher_blobs)
        teacher.requires_grad_(False)
        teacher.eval()
    return model, teacher
