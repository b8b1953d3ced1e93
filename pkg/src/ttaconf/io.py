"""TTAC v1 logit-tensor files and key-value experiment config documents.

Layout (little-endian): magic "TTAC", u32 version, u64 n_examples,
u32 n_augs, u32 n_classes, then n_augs names (u32 byte length + UTF-8),
then labels as N x u32, then logits as N x M x K float32 row-major.
Storage is float32; all computation stays float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InvalidInputError, LogitTensor

MAGIC = b"TTAC"
VERSION = 1

# ImageNet-scale tensors (50000 x 13 x 1000 float32 ~ 2.6 GB) are the
# supported maximum; files are read whole, not streamed.


class TensorFormatError(ValueError):
    """Base for structured TTAC parse/validation failures."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class TruncatedFileError(TensorFormatError):
    def __init__(self, section: str):
        super().__init__(f"file ends inside the {section} section")
        self.section = section


class DimensionError(TensorFormatError):
    pass


class NonFiniteValueError(TensorFormatError):
    def __init__(self, example: int):
        super().__init__(f"non-finite logit at example {example}")
        self.example = example


class LabelRangeError(TensorFormatError):
    def __init__(self, example: int, label: int, n_classes: int):
        super().__init__(
            f"label {label} at example {example} outside [0, {n_classes})"
        )
        self.example = example


@dataclass(frozen=True)
class LogitFileHeader:
    n_examples: int
    n_augs: int
    n_classes: int
    aug_names: tuple[str, ...]
    version: int = VERSION


def write_tensor(tensor: LogitTensor, path: str | Path) -> None:
    """Write a TTAC v1 file; identical tensors give byte-identical files."""
    n, m, k = tensor.n_examples, tensor.n_augs, tensor.n_classes
    parts = [MAGIC, struct.pack("<IQII", VERSION, n, m, k)]
    for name in tensor.aug_names:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
    parts.append(tensor.labels.astype("<u4").tobytes())
    parts.append(np.ascontiguousarray(tensor.logits, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, section: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(section)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk


def _read_header(cur: _Cursor) -> LogitFileHeader:
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {magic!r}")
    version, n, m, k = struct.unpack("<IQII", cur.take(20, "header"))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if n < 1 or m < 1 or k < 2:
        raise DimensionError(f"invalid dimensions N={n}, M={m}, K={k}")
    names = []
    for i in range(m):
        (length,) = struct.unpack("<I", cur.take(4, f"aug name {i} length"))
        names.append(cur.take(length, f"aug name {i}").decode("utf-8"))
    return LogitFileHeader(n_examples=n, n_augs=m, n_classes=k, aug_names=tuple(names))


def read_header(path: str | Path) -> LogitFileHeader:
    """Parse only the header, for cheap inspection of big files."""
    with open(path, "rb") as fh:
        return _read_header(_Cursor(fh.read(4096 * 64)))


def read_tensor(path: str | Path) -> LogitTensor:
    """Read and fully validate a TTAC v1 file."""
    cur = _Cursor(Path(path).read_bytes())
    header = _read_header(cur)
    n, m, k = header.n_examples, header.n_augs, header.n_classes
    labels = np.frombuffer(cur.take(4 * n, "labels"), dtype="<u4").astype(np.int64)
    logits_bytes = cur.take(4 * n * m * k, "logits")
    if cur.pos != len(cur.data):
        raise DimensionError(
            f"{len(cur.data) - cur.pos} trailing bytes after logits payload"
        )
    logits = (
        np.frombuffer(logits_bytes, dtype="<f4").astype(np.float64).reshape(n, m, k)
    )
    finite = np.isfinite(logits).all(axis=(1, 2))
    if not finite.all():
        raise NonFiniteValueError(int(np.flatnonzero(~finite)[0]))
    in_range = labels < k
    if not in_range.all():
        bad = int(np.flatnonzero(~in_range)[0])
        raise LabelRangeError(bad, int(labels[bad]), k)
    try:
        return LogitTensor(logits=logits, labels=labels, aug_names=header.aug_names)
    except InvalidInputError as exc:
        raise DimensionError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Experiment config documents: `key = value` lines, values as JSON literals
# ---------------------------------------------------------------------------


def dump_kv(fields: dict, format_tag: str) -> str:
    lines = [f"format = {json.dumps(format_tag)}"]
    lines += [f"{key} = {json.dumps(value)}" for key, value in fields.items()]
    return "\n".join(lines) + "\n"


def parse_kv(text: str, format_tag: str) -> dict:
    fields: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"line {lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        try:
            fields[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"line {lineno}: bad value ({exc})") from exc
    if fields.pop("format", None) != format_tag:
        raise InvalidInputError(f"expected a {format_tag} document")
    return fields
