"""Named-tensor checkpoint archive (magic ``SPKW``), little-endian.

Layout: ``SPKW`` + version u32 + entry count u32, then per entry:
name length u16 + UTF-8 name + ndim u32 + dims u32 each + raw float32 data.
"""

from __future__ import annotations

import struct

import numpy as np

SPKW_MAGIC = b"SPKW"
SPKW_VERSION = 1
_HEADER = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def write_checkpoint(entries: dict[str, np.ndarray]) -> bytes:
    parts = [_HEADER.pack(SPKW_MAGIC, SPKW_VERSION, len(entries))]
    for name, arr in entries.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def read_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < _HEADER.size:
        raise CheckpointError("file shorter than the checkpoint header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != SPKW_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {SPKW_MAGIC!r}")
    if version != SPKW_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    offset = _HEADER.size
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", data, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            n_bytes = 4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4
            raw = data[offset:offset + n_bytes]
            if len(raw) != n_bytes:
                raise CheckpointError(f"truncated data for entry {name!r}")
            offset += n_bytes
            entries[name] = np.frombuffer(raw, "<f4").reshape(shape).copy()
        except struct.error:
            raise CheckpointError("truncated checkpoint entry") from None
    return entries
