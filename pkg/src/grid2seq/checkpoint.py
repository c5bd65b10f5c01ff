"""Binary checkpoint format.

Layout (little-endian): magic ``G2S1``, u64 config hash, u64 step, u32
record count, then records. A record is u32 name length, name bytes
(utf-8), u32 rank, rank x u64 extents, row-major float64 values. Model
parameters come first, then optimiser and trainer state records
(``adam.*``, ``train.*``, ``model.*``, ``dev.*``) in the same format.
"""

import hashlib
import struct

import numpy as np

MAGIC = b"G2S1"


class CheckpointError(ValueError):
    pass


def config_hash(text):
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def write_records(path, records, cfg_hash, step):
    """``records`` is an ordered mapping name -> array."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQI", cfg_hash, step, len(records)))
        for name, value in records.items():
            arr = np.require(np.asarray(value, dtype="<f8"), requirements="C")
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def read_records(path):
    """Return (records, config hash, step)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    cfg_hash, step, count = struct.unpack_from("<QQI", data, 4)
    pos = 4 + struct.calcsize("<QQI")
    records = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode()
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            size = int(np.prod(shape)) if rank else 1
            records[name] = np.frombuffer(data, "<f8", size, pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as err:
        raise CheckpointError(f"{path}: truncated checkpoint") from err
    return records, cfg_hash, step
