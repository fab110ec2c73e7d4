"""Bit-exact checkpoint persistence (.lpck) and the experiment directory layout.

File format, all integers little-endian:

    bytes 0-3   magic "LPCK"
    bytes 4-7   u32 format version (currently 1)
    u32 length + UTF-8 canonical model-spec string
    i64 replicate seed
    i64 iteration
    u32 length + UTF-8 precision tag ("f32" | "f64")
    u32 slot count, then per tensor slot:
        u32 length + UTF-8 name
        u32 length + UTF-8 role
        u8 ndim, then u32 per dimension
        u64 flat offset
    u64 element count P
    raw little-endian payload (P x element size bytes)
    u32 CRC32 (IEEE) over every preceding byte

Files are a pure function of the checkpoint contents (no timestamps), are
written to a temp file and renamed into place, and are never mutated after
creation.

Directory layout: <run-root>/<experiment>/<seed>/ckpt_<iteration>.lpck, with
run.json alongside describing spec, hyperparameters, schedule, and dataset
digests (written by the experiment runner).
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from linpath.errors import (
    CheckpointCRCError,
    CheckpointIntegrityError,
    CheckpointMagicError,
    CheckpointVersionError,
)
from linpath.nn.engine import model_manifest
from linpath.nn.params import Manifest, ParamVector, TensorSlot
from linpath.nn.spec import ModelSpec
from linpath.trainer import Checkpoint

MAGIC = b"LPCK"
FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def checkpoint_path(experiment_dir, seed: int, iteration: int) -> Path:
    return Path(experiment_dir) / str(seed) / f"ckpt_{iteration}.lpck"


def _pack_str(out: bytearray, s: str):
    raw = s.encode("utf-8")
    out += struct.pack("<I", len(raw))
    out += raw


def serialize(ckpt: Checkpoint) -> bytes:
    """Canonical byte serialization; identical checkpoints give identical bytes."""
    spec = ckpt.spec
    theta = ckpt.params
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    _pack_str(out, spec.canonical())
    out += struct.pack("<qq", ckpt.seed, ckpt.iteration)
    _pack_str(out, spec.precision)
    out += struct.pack("<I", len(theta.manifest))
    for slot in theta.manifest:
        _pack_str(out, slot.name)
        _pack_str(out, slot.role)
        out += struct.pack("<B", len(slot.shape))
        for d in slot.shape:
            out += struct.pack("<I", d)
        out += struct.pack("<Q", slot.offset)
    out += struct.pack("<Q", theta.size)
    out += np.ascontiguousarray(theta.values).astype(_DTYPES[spec.precision],
                                                     copy=False).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def save(ckpt: Checkpoint, path) -> None:
    """Write atomically: serialize to <path>.tmp, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(serialize(ckpt))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointIntegrityError("file ends inside a field")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def i64(self):
        return struct.unpack("<q", self.take(8))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def load(path) -> Checkpoint:
    """Read and verify a checkpoint; magic, version, and CRC are checked
    before anything is constructed."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointMagicError(f"{path}: not a checkpoint file")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported format version {version} (supported: {FORMAT_VERSION})")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise CheckpointCRCError(f"{path}: CRC mismatch, file is corrupt")

    r = _Reader(raw[:-4])
    r.take(8)  # magic + version, already validated
    try:
        spec = ModelSpec.from_canonical(r.string())
    except ValueError as e:
        raise CheckpointIntegrityError(f"{path}: bad embedded model spec: {e}") from e
    seed = r.i64()
    iteration = r.i64()
    precision = r.string()
    if precision != spec.precision or precision not in _DTYPES:
        raise CheckpointIntegrityError(
            f"{path}: precision tag {precision!r} disagrees with spec {spec.precision!r}")

    slots = []
    for _ in range(r.u32()):
        name = r.string()
        role = r.string()
        shape = tuple(r.u32() for _ in range(r.u8()))
        offset = r.u64()
        slots.append(TensorSlot(name=name, shape=shape, offset=offset, role=role))
    try:
        manifest = Manifest(slots)
    except ValueError as e:
        raise CheckpointIntegrityError(f"{path}: bad manifest: {e}") from e
    if manifest != model_manifest(spec):
        raise CheckpointIntegrityError(f"{path}: manifest does not match the embedded spec")

    count = r.u64()
    if count != manifest.total_size:
        raise CheckpointIntegrityError(
            f"{path}: payload count {count} != manifest size {manifest.total_size}")
    file_dtype = _DTYPES[precision]
    payload = r.take(count * file_dtype.itemsize)
    if r.pos != len(r.raw):
        raise CheckpointIntegrityError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    values = np.frombuffer(payload, dtype=file_dtype).astype(spec.dtype)
    return Checkpoint(iteration=iteration, seed=seed,
                      params=ParamVector(values, manifest), spec=spec,
                      meta={"schema_version": version, "precision": precision})
