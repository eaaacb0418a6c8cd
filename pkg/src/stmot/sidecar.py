"""Binary sidecar for per-object feature vectors.

Layout, all little-endian:

    magic   4 bytes  b"FVEC"
    version u32      currently 1
    dim     u32      vector length
    count   u64      number of records
    records count * (u32 key_a, u32 key_b, dim * f32)

Keys are (frame, index-within-frame) for instance embeddings; flattened
feature-map streams reuse the same container with key_b as the stream slot.
Readers validate magic, version, and exact payload size, and reject
duplicate keys.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FVEC"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_KEY = struct.Struct("<II")


class SidecarFormatError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path


def write_sidecar(path, dim: int, entries: list[tuple[int, int, np.ndarray]]) -> None:
    """entries: (key_a, key_b, vector) triples; vectors are stored as float32."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dim, len(entries)))
        for a, b, vec in entries:
            vec32 = np.asarray(vec, dtype="<f4")
            if vec32.shape != (dim,):
                raise ValueError(f"vector for key ({a}, {b}) has shape {vec32.shape}, expected ({dim},)")
            fh.write(_KEY.pack(a, b))
            fh.write(vec32.tobytes())


def read_sidecar(path) -> tuple[int, dict[tuple[int, int], np.ndarray]]:
    """Returns (dim, {(key_a, key_b): float64 vector})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise SidecarFormatError(path, "file shorter than header")
    magic, version, dim, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise SidecarFormatError(path, f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise SidecarFormatError(path, f"unsupported version {version}")
    record_size = _KEY.size + 4 * dim
    expected = _HEADER.size + count * record_size
    if len(raw) != expected:
        raise SidecarFormatError(path, f"payload is {len(raw)} bytes, expected {expected}")
    out: dict[tuple[int, int], np.ndarray] = {}
    offset = _HEADER.size
    for _ in range(count):
        a, b = _KEY.unpack_from(raw, offset)
        offset += _KEY.size
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset).astype(float)
        offset += 4 * dim
        if (a, b) in out:
            raise SidecarFormatError(path, f"duplicate key ({a}, {b})")
        out[(a, b)] = vec
    return dim, out


def validate_against_counts(path, table: dict[tuple[int, int], np.ndarray],
                            counts: dict[int, int]) -> None:
    """Check that keys are exactly (frame, 0..count-1) for every frame."""
    expected = {(f, i) for f, n in counts.items() for i in range(n)}
    got = set(table)
    if expected != got:
        missing = sorted(expected - got)[:5]
        extra = sorted(got - expected)[:5]
        raise SidecarFormatError(
            path, f"key mismatch vs detections: missing {missing}, unexpected {extra}")
