"""Binary weights files and JSON run reports.

Weights file layout, all integers little-endian:

    magic           5 bytes, b"ULSQ1"
    version         u32
    arch id         u16 length + UTF-8 bytes
    tensor count    u32
    per tensor:
        name        u16 length + UTF-8 bytes
        ndim        u8
        dims        ndim x u32
        values      float32 little-endian, C row-major

Tensors appear in canonical graph order. Loading verifies every name and
every dimension against a freshly built architecture, so a file whose
declared totals disagree with the architecture is rejected. A file saved,
loaded and saved again is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import architectures
from .errors import FormatError, IntegrityError

MAGIC = b"ULSQ1"
FORMAT_VERSION = 1


def save_weights(network, path) -> int:
    """Write the network's tensors to path; returns bytes written."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", FORMAT_VERSION)
    arch = network.spec.name.encode("utf-8")
    buf += struct.pack("<H", len(arch)) + arch
    tensors = list(network.named_arrays())
    buf += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        encoded = name.encode("utf-8")
        buf += struct.pack("<H", len(encoded)) + encoded
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(buf)
    return len(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise IntegrityError(f"truncated weights file while reading {what}")
        chunk = self.data[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_weights(path):
    """Rebuild a network from a weights file, verifying every tensor."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError(f"{path} is not a weights file (bad magic)")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported weights format version {version}")
    (arch_len,) = r.unpack("<H", "architecture id")
    arch_id = r.take(arch_len, "architecture id").decode("utf-8")
    if arch_id not in architectures.ARCH_IDS:
        raise FormatError(f"weights file names unknown architecture {arch_id!r}")
    (tensor_count,) = r.unpack("<I", "tensor count")
    network = architectures.build(arch_id)
    expected = list(network.named_arrays())
    if tensor_count != len(expected):
        raise IntegrityError(
            f"file declares {tensor_count} tensors, architecture {arch_id!r} "
            f"has {len(expected)}"
        )
    for name, arr in expected:
        (name_len,) = r.unpack("<H", "tensor name")
        found = r.take(name_len, "tensor name").decode("utf-8")
        if found != name:
            raise IntegrityError(f"tensor order mismatch: expected {name!r}, found {found!r}")
        (ndim,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{ndim}I", f"dims of {name}") if ndim else ()
        if dims != arr.shape:
            raise IntegrityError(
                f"tensor {name!r} has dims {dims}, architecture expects {arr.shape}"
            )
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = r.take(4 * count, f"values of {name}")
        arr[...] = np.frombuffer(raw, dtype="<f4").reshape(arr.shape)
    if r.off != len(data):
        raise IntegrityError(f"{len(data) - r.off} trailing bytes after the last tensor")
    return network


def write_report(metrics_report, train_logs, config: dict, path) -> None:
    """Single JSON document: resolved config, per-epoch logs, final metrics."""
    from . import __version__

    doc = {
        "version": __version__,
        "config": config,
        "epochs": list(train_logs),
        "metrics": metrics_report.to_dict() if metrics_report is not None else None,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
