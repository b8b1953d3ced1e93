import struct

import numpy as np
import pytest

from ttaconf.core import InvalidInputError, LogitTensor, RngState
from ttaconf.io import (
    BadMagicError,
    DimensionError,
    LabelRangeError,
    NonFiniteValueError,
    TruncatedFileError,
    UnsupportedVersionError,
    dump_kv,
    parse_kv,
    read_header,
    read_tensor,
    write_tensor,
)


def minimal_tensor():
    return LogitTensor(np.array([[[1.0, 2.0]]]), np.array([0]))


def random_tensor(seed=0, n=20, m=3, k=5):
    gen = RngState(seed, "io-test").generator()
    return LogitTensor(
        gen.normal(size=(n, m, k)) * 4,
        gen.integers(0, k, size=n),
        aug_names=("identity",) + tuple(f"view-{i}" for i in range(1, m)),
    )


def test_minimal_tensor_layout(tmp_path):
    path = tmp_path / "minimal.ttac"
    write_tensor(minimal_tensor(), path)
    data = path.read_bytes()
    # magic 4 + fixed header 20 + name (4 + len("identity")) + labels 4 + logits 8
    assert len(data) == 4 + 20 + 4 + len(b"identity") + 4 + 8
    assert data[:4] == b"TTAC"
    loaded = read_tensor(path)
    assert loaded.n_examples == 1 and loaded.n_augs == 1 and loaded.n_classes == 2
    np.testing.assert_array_equal(loaded.logits, [[[1.0, 2.0]]])
    np.testing.assert_array_equal(loaded.labels, [0])


def test_round_trip_within_float32(tmp_path):
    tensor = random_tensor(seed=1)
    path = tmp_path / "t.ttac"
    write_tensor(tensor, path)
    loaded = read_tensor(path)
    np.testing.assert_array_equal(
        loaded.logits, tensor.logits.astype(np.float32).astype(np.float64)
    )
    np.testing.assert_array_equal(loaded.labels, tensor.labels)
    assert loaded.aug_names == tensor.aug_names


def test_write_is_byte_deterministic(tmp_path):
    tensor = random_tensor(seed=2)
    p1, p2 = tmp_path / "a.ttac", tmp_path / "b.ttac"
    write_tensor(tensor, p1)
    write_tensor(tensor, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_write_read_write_identity(tmp_path):
    tensor = random_tensor(seed=3)
    p1, p2 = tmp_path / "a.ttac", tmp_path / "b.ttac"
    write_tensor(tensor, p1)
    write_tensor(read_tensor(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_read_header_only(tmp_path):
    tensor = random_tensor(seed=4, n=7, m=2, k=9)
    path = tmp_path / "t.ttac"
    write_tensor(tensor, path)
    header = read_header(path)
    assert (header.n_examples, header.n_augs, header.n_classes) == (7, 2, 9)
    assert header.aug_names == tensor.aug_names
    assert header.version == 1


def test_truncation_at_every_boundary(tmp_path):
    tensor = random_tensor(seed=5, n=3, m=2, k=4)
    path = tmp_path / "t.ttac"
    write_tensor(tensor, path)
    data = path.read_bytes()
    name_bytes = sum(4 + len(n.encode()) for n in tensor.aug_names)
    boundaries = {
        2: "magic",
        4 + 10: "header",
        4 + 20 + 2: "aug name 0 length",
        4 + 20 + name_bytes + 4: "labels",
        4 + 20 + name_bytes + 3 * 4 + 5: "logits",
    }
    for cut, section in boundaries.items():
        bad = tmp_path / f"cut{cut}.ttac"
        bad.write_bytes(data[:cut])
        with pytest.raises(TruncatedFileError) as info:
            read_tensor(bad)
        assert section in str(info.value)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ttac"
    tensor = minimal_tensor()
    write_tensor(tensor, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(BadMagicError):
        read_tensor(path)


def test_bad_version(tmp_path):
    path = tmp_path / "bad.ttac"
    write_tensor(minimal_tensor(), path)
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(data))
    with pytest.raises(UnsupportedVersionError):
        read_tensor(path)


def test_nan_logit_names_example(tmp_path):
    tensor = random_tensor(seed=6, n=4, m=1, k=3)
    path = tmp_path / "t.ttac"
    write_tensor(tensor, path)
    data = bytearray(path.read_bytes())
    offset = len(data) - 4 * 1 * 3 * 4  # start of logits
    example = 2
    struct.pack_into("<f", data, offset + example * 3 * 4, float("nan"))
    path.write_bytes(bytes(data))
    with pytest.raises(NonFiniteValueError) as info:
        read_tensor(path)
    assert info.value.example == example


def test_label_out_of_range(tmp_path):
    tensor = random_tensor(seed=7, n=4, m=1, k=3)
    path = tmp_path / "t.ttac"
    write_tensor(tensor, path)
    data = bytearray(path.read_bytes())
    name_bytes = sum(4 + len(n.encode()) for n in tensor.aug_names)
    labels_offset = 24 + name_bytes
    struct.pack_into("<I", data, labels_offset + 4, 3)  # label 3 with K=3
    path.write_bytes(bytes(data))
    with pytest.raises(LabelRangeError) as info:
        read_tensor(path)
    assert info.value.example == 1


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.ttac"
    write_tensor(minimal_tensor(), path)
    path.write_bytes(path.read_bytes() + b"extra")
    with pytest.raises(DimensionError):
        read_tensor(path)


def test_kv_document_round_trip():
    fields = {"alphas": [0.01, 0.1], "score": "raps", "n_splits": 10, "note": None}
    doc = dump_kv(fields, "ttaconf-experiment-v1")
    assert parse_kv(doc, "ttaconf-experiment-v1") == fields
    with pytest.raises(InvalidInputError):
        parse_kv(doc, "other-format")
    with pytest.raises(InvalidInputError):
        parse_kv("no equals sign here", "ttaconf-experiment-v1")
