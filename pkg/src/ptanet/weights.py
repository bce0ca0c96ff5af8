"""Binary weight serialization (PTAW container).

Layout, all integers little-endian:

    magic   4 bytes  b"PTAW"
    version u32      == 1
    count   u32      number of entries
    entry * count:
        name_len u16, name UTF-8 bytes
        dtype    u8   (0 = float32, the only code in version 1)
        ndim     u8
        dims     u32 * ndim
    payload: raw little-endian float32 data, C order, in manifest order
    trailer u64      total payload byte length

The trailer plus the manifest-derived sizes let the loader reject truncated
or padded files before touching any array contents.  One container holds one
flat name -> array mapping; the model's canonical ``state_items`` order is
used when saving, and loading checks names and shapes against the model.
"""

import struct
from typing import Dict, Iterable, List, Tuple

import numpy as np

MAGIC = b"PTAW"
VERSION = 1
DTYPE_F32 = 0


class WeightsError(Exception):
    """Raised for malformed, truncated, or mismatched weight files."""


def write_arrays(path: str, items: Iterable[Tuple[str, np.ndarray]]) -> None:
    entries: List[Tuple[str, np.ndarray]] = []
    seen = set()
    for name, arr in items:
        if name in seen:
            raise WeightsError(f"duplicate entry name {name!r}")
        seen.add(name)
        arr = np.asarray(arr, dtype="<f4")
        # ascontiguousarray promotes 0-d to 1-d; reshape restores the shape
        arr = np.ascontiguousarray(arr).reshape(arr.shape)
        entries.append((name, arr))

    manifest = bytearray()
    manifest += struct.pack("<I", len(entries))
    for name, arr in entries:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise WeightsError(f"entry name too long: {name[:40]!r}...")
        if arr.ndim > 0xFF:
            raise WeightsError(f"too many dimensions for {name!r}")
        manifest += struct.pack("<H", len(raw)) + raw
        manifest += struct.pack("<BB", DTYPE_F32, arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)

    payload = b"".join(arr.tobytes() for _, arr in entries)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(manifest)
        f.write(payload)
        f.write(struct.pack("<Q", len(payload)))


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise WeightsError(f"{self.path}: truncated (needed {n} bytes at offset {self.off})")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_arrays(path: str) -> Dict[str, np.ndarray]:
    """Load a container, verifying magic, version, sizes, and the trailer."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise WeightsError(f"cannot read {path}: {e}") from e

    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise WeightsError(f"{path}: bad magic, not a weights container")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise WeightsError(f"{path}: unsupported version {version}")
    (count,) = r.unpack("<I")

    shapes: List[Tuple[str, Tuple[int, ...]]] = []
    names = set()
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightsError(f"{path}: undecodable entry name") from e
        if name in names:
            raise WeightsError(f"{path}: duplicate entry {name!r}")
        names.add(name)
        dtype_code, ndim = r.unpack("<BB")
        if dtype_code != DTYPE_F32:
            raise WeightsError(f"{path}: unknown dtype code {dtype_code} for {name!r}")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        shapes.append((name, tuple(int(d) for d in dims)))

    expected_payload = sum(
        4 * int(np.prod(shape, dtype=np.int64)) for _, shape in shapes
    )
    remaining = len(blob) - r.off
    if remaining != expected_payload + 8:
        raise WeightsError(
            f"{path}: payload size mismatch (manifest implies {expected_payload} "
            f"bytes, file holds {remaining - 8})"
        )
    out: Dict[str, np.ndarray] = {}
    for name, shape in shapes:
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(nbytes), dtype="<f4").reshape(shape).copy()
        out[name] = arr
    (trailer,) = r.unpack("<Q")
    if trailer != expected_payload:
        raise WeightsError(
            f"{path}: trailer records {trailer} payload bytes, expected {expected_payload}"
        )
    if r.off != len(blob):
        raise WeightsError(f"{path}: {len(blob) - r.off} trailing bytes after trailer")
    return out


def save_model(model, path: str) -> None:
    write_arrays(path, model.state_items())


def load_model(model, path: str) -> None:
    model.load_state(read_arrays(path))
