import json
import struct

import numpy as np
import pytest

from checkpoint_io import (FORMAT_VERSION, MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint,
                           save_checkpoint)
from errors import DataError


def _tensors():
    return {"stage0.conv.weight": np.arange(24, dtype=np.float64).reshape(2, 3, 2, 2),
            "head.bias": np.array([0.5, -0.25], dtype=np.float32)}


def test_roundtrip_preserves_names_values_and_dtypes():
    tensors, metadata = decode_checkpoint(encode_checkpoint(_tensors(), {"kind": "gqstn", "seed": 3}))
    assert set(tensors) == {"stage0.conv.weight", "head.bias"}
    np.testing.assert_array_equal(tensors["stage0.conv.weight"], _tensors()["stage0.conv.weight"])
    assert tensors["head.bias"].dtype == np.float32
    assert metadata == {"kind": "gqstn", "seed": 3}


def test_reencoding_is_byte_identical(tmp_path):
    path = save_checkpoint(tmp_path / "model.gqtn", _tensors(), {"kind": "quality"})
    tensors, metadata = load_checkpoint(path)
    assert encode_checkpoint(tensors, metadata) == path.read_bytes()


def test_header_layout():
    blob = encode_checkpoint(_tensors(), {})
    magic, version, _ = struct.unpack_from("<4sII", blob, 0)
    assert magic == MAGIC
    assert version == FORMAT_VERSION


def test_bad_magic_is_rejected():
    blob = bytearray(encode_checkpoint(_tensors(), {}))
    blob[:4] = b"XXXX"
    with pytest.raises(DataError):
        decode_checkpoint(bytes(blob))


def test_unknown_version_is_rejected():
    blob = bytearray(encode_checkpoint(_tensors(), {}))
    struct.pack_into("<I", blob, 4, FORMAT_VERSION + 1)
    with pytest.raises(DataError):
        decode_checkpoint(bytes(blob))


def test_truncated_or_padded_blob_is_rejected():
    blob = encode_checkpoint(_tensors(), {})
    for broken in (blob[:3], blob[:-20], blob + b"\x00"):
        with pytest.raises(DataError):
            decode_checkpoint(broken)


def test_missing_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.gqtn")


def _with_manifest(blob, mutate):
    _, version, length = struct.unpack_from("<4sII", blob, 0)
    manifest = json.loads(blob[12:12 + length])
    mutate(manifest)
    raw = json.dumps(manifest).encode("utf-8")
    return struct.pack("<4sII", MAGIC, version, len(raw)) + raw + blob[12 + length:]


def test_incomplete_manifest_is_a_data_error():
    blob = encode_checkpoint(_tensors(), {})
    for mutate in (lambda m: m.pop("payload_bytes"), lambda m: m.pop("tensors"),
                   lambda m: m.pop("metadata"), lambda m: m["tensors"][0].pop("shape"),
                   lambda m: m["tensors"][1].update(dtype="not-a-dtype")):
        with pytest.raises(DataError):
            decode_checkpoint(_with_manifest(blob, mutate))


def test_bad_tensor_table_is_a_data_error():
    blob = encode_checkpoint(_tensors(), {})
    for mutate in (lambda m: m["tensors"][1].update(offset=16),
                   lambda m: m["tensors"][0].update(offset=-8),
                   lambda m: m["tensors"][1].update(nbytes=4),
                   lambda m: m["tensors"][1].update(shape=[4]),
                   lambda m: m["tensors"].pop()):
        with pytest.raises(DataError):
            decode_checkpoint(_with_manifest(blob, mutate))


def test_unmodified_manifest_still_decodes():
    blob = encode_checkpoint(_tensors(), {"kind": "gqstn"})
    tensors, metadata = decode_checkpoint(_with_manifest(blob, lambda m: None))
    np.testing.assert_array_equal(tensors["head.bias"], _tensors()["head.bias"])
    assert metadata == {"kind": "gqstn"}
