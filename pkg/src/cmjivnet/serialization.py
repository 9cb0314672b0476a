"""Little-endian binary container primitives shared by dataset and
checkpoint files.

Record encoding for named tensors: u16 name length, UTF-8 name, u8 ndim,
u32 dims[], then raw float32 data. All multi-byte integers are
little-endian. Files are written to a temporary sibling path and renamed
into place so readers never observe partial writes.
"""

from __future__ import annotations

import os
import struct
from contextlib import contextmanager

import numpy as np

DATASET_MAGIC = b"CMJD"
CHECKPOINT_MAGIC = b"CMJV"
FORMAT_VERSION = 1


class FileFormatError(Exception):
    """Malformed, truncated, or wrong-version container file."""


def read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FileFormatError(f"truncated file while reading {what} "
                              f"(wanted {n} bytes, got {len(buf)})")
    return buf


def write_u8(f, x: int) -> None:
    f.write(struct.pack("<B", x))


def write_u16(f, x: int) -> None:
    f.write(struct.pack("<H", x))


def write_u32(f, x: int) -> None:
    f.write(struct.pack("<I", x))


def write_u64(f, x: int) -> None:
    f.write(struct.pack("<Q", x))


def read_u8(f, what: str = "u8") -> int:
    return struct.unpack("<B", read_exact(f, 1, what))[0]


def read_u16(f, what: str = "u16") -> int:
    return struct.unpack("<H", read_exact(f, 2, what))[0]


def read_u32(f, what: str = "u32") -> int:
    return struct.unpack("<I", read_exact(f, 4, what))[0]


def read_u64(f, what: str = "u64") -> int:
    return struct.unpack("<Q", read_exact(f, 8, what))[0]


def write_header(f, magic: bytes, version: int = FORMAT_VERSION) -> None:
    f.write(magic)
    write_u32(f, version)


def read_header(f, magic: bytes, version: int = FORMAT_VERSION) -> None:
    got = read_exact(f, 4, "magic")
    if got != magic:
        raise FileFormatError(f"bad magic {got!r}, expected {magic!r}")
    ver = read_u32(f, "version")
    if ver != version:
        raise FileFormatError(f"unsupported version {ver}, expected {version}")


def write_f32_block(f, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32_block(f, count: int, what: str) -> np.ndarray:
    raw = read_exact(f, 4 * count, what)
    return np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=True)


def write_tensor_record(f, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ValueError(f"tensor name too long: {name[:40]}...")
    write_u16(f, len(encoded))
    f.write(encoded)
    write_u8(f, arr.ndim)
    for d in arr.shape:
        write_u32(f, d)
    write_f32_block(f, arr)


def read_tensor_record(f):
    name_len = read_u16(f, "tensor name length")
    name = read_exact(f, name_len, "tensor name").decode("utf-8")
    ndim = read_u8(f, f"tensor {name} ndim")
    dims = tuple(read_u32(f, f"tensor {name} dim {i}") for i in range(ndim))
    count = int(np.prod(dims)) if dims else 1
    try:
        data = read_f32_block(f, count, f"tensor {name} data")
    except FileFormatError as e:
        raise FileFormatError(f"tensor {name}: {e}") from None
    return name, data.reshape(dims)


def rng_state_words(rng: np.random.Generator) -> list:
    """Flatten a PCG64 generator state into six u64 words."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported bit generator {st['bit_generator']}")
    mask = (1 << 64) - 1
    state, inc = st["state"]["state"], st["state"]["inc"]
    return [state & mask, (state >> 64) & mask,
            inc & mask, (inc >> 64) & mask,
            int(st["has_uint32"]) & mask, int(st["uinteger"]) & mask]


def rng_from_state_words(words) -> np.random.Generator:
    if len(words) != 6:
        raise FileFormatError(f"RNG state needs 6 words, got {len(words)}")
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(words[0]) | (int(words[1]) << 64),
                  "inc": int(words[2]) | (int(words[3]) << 64)},
        "has_uint32": int(words[4]),
        "uinteger": int(words[5]),
    }
    return rng


@contextmanager
def atomic_write(path: str):
    """Yield a binary file handle; on success, rename into the target path."""
    tmp = f"{path}.tmp.{os.getpid()}"
    f = open(tmp, "wb")
    try:
        yield f
        f.flush()
        os.fsync(f.fileno())
        f.close()
        os.replace(tmp, path)
    except BaseException:
        f.close()
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
