import struct

import numpy as np
import pytest

from linpath import build_model, load, save
from linpath.errors import (
    CheckpointCRCError,
    CheckpointIntegrityError,
    CheckpointMagicError,
    CheckpointVersionError,
)
from linpath.store import checkpoint_path, serialize
from linpath.trainer import Checkpoint


def _ckpt(spec, seed=7, iteration=42):
    return Checkpoint(iteration=iteration, seed=seed, params=build_model(spec, seed),
                      spec=spec, meta={"schema_version": 1, "precision": spec.precision})


@pytest.mark.parametrize("spec_fixture", ["small_mlp_spec", "small_mlp_spec_f64",
                                          "tiny_resnet_spec", "tiny_resnet_spec_f64"])
def test_roundtrip_bit_exact(spec_fixture, request, tmp_path):
    spec = request.getfixturevalue(spec_fixture)
    ckpt = _ckpt(spec)
    path = tmp_path / "c.lpck"
    save(ckpt, path)
    back = load(path)
    assert back.iteration == ckpt.iteration
    assert back.seed == ckpt.seed
    assert back.spec == spec
    assert back.params.manifest == ckpt.params.manifest
    assert back.params.values.dtype == ckpt.params.values.dtype
    assert np.array_equal(back.params.values, ckpt.params.values)


def test_serialization_is_pure_function(small_mlp_spec):
    a = serialize(_ckpt(small_mlp_spec))
    b = serialize(_ckpt(small_mlp_spec))
    assert a == b


def test_flipped_payload_byte_is_corruption(small_mlp_spec, tmp_path):
    path = tmp_path / "c.lpck"
    save(_ckpt(small_mlp_spec), path)
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0xFF  # last payload byte, just before the CRC trailer
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointCRCError):
        load(path)


def test_unsupported_version_rejected_before_parse(small_mlp_spec, tmp_path):
    path = tmp_path / "c.lpck"
    save(_ckpt(small_mlp_spec), path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 255)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        load(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "c.lpck"
    path.write_bytes(b"JUNKJUNKJUNKJUNK")
    with pytest.raises(CheckpointMagicError, match="not a checkpoint file"):
        load(path)
    path.write_bytes(b"LP")
    with pytest.raises(CheckpointMagicError):
        load(path)


def test_truncated_file_detected(small_mlp_spec, tmp_path):
    path = tmp_path / "c.lpck"
    save(_ckpt(small_mlp_spec), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(CheckpointCRCError):
        load(path)


def test_tampered_iteration_fails_crc(small_mlp_spec, tmp_path):
    path = tmp_path / "c.lpck"
    save(_ckpt(small_mlp_spec, iteration=5), path)
    raw = bytearray(path.read_bytes())
    # iteration lives right after the spec string and seed
    spec_len = struct.unpack("<I", raw[8:12])[0]
    off = 12 + spec_len + 8
    raw[off:off + 8] = struct.pack("<q", 6)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointCRCError):
        load(path)


def test_manifest_spec_consistency_enforced(small_mlp_spec, small_mlp_spec_f64, tmp_path):
    # craft a file whose spec string disagrees with its manifest payload:
    # keep everything from the f32 checkpoint but claim f64 precision
    ckpt = _ckpt(small_mlp_spec)
    raw = bytearray(serialize(ckpt))
    canon = small_mlp_spec.canonical().encode()
    swapped = small_mlp_spec_f64.canonical().encode()
    assert len(canon) == len(swapped)  # only "f32" -> "f64" changes
    idx = raw.find(canon)
    raw[idx:idx + len(canon)] = swapped
    import zlib
    raw[-4:] = struct.pack("<I", zlib.crc32(bytes(raw[:-4])))
    path = tmp_path / "c.lpck"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointIntegrityError):
        load(path)


def test_checkpoint_path_layout(tmp_path):
    p = checkpoint_path(tmp_path / "exp", 3, 128)
    assert p == tmp_path / "exp" / "3" / "ckpt_128.lpck"
