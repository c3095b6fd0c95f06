"""Shared container for the package's binary file formats.

Layout: 4 magic bytes, u32 version, u64 header length, a UTF-8 JSON
header, then the raw array blocks in header order. Arrays are written
little-endian, row-major; floats are 64-bit. Each consumer picks its own
magic so files cannot be confused, and bumps its version when the header
schema changes.
"""

import json
import struct

import numpy as np

from .errors import FormatError

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8"), "<u1": np.dtype("<u1")}


def write_container(path, magic, version, header, arrays):
    """Write ``arrays`` (name -> ndarray) under a JSON ``header``.

    The header gains an ``arrays`` entry recording name, shape and dtype
    of every block, in write order.
    """
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    header = dict(header)
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8", copy=False)
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8", copy=False)
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for block {name!r}")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str})
        blobs.append(arr.tobytes(order="C"))
    header["arrays"] = manifest
    raw = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<IQ", version, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_container(path, magic, version):
    """Read a container written by :func:`write_container`.

    Returns ``(header, arrays)`` with arrays keyed by name. Raises
    :class:`FormatError` on wrong magic, version mismatch or truncation.
    """
    with open(path, "rb") as fh:
        got = fh.read(4)
        if got != magic:
            raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
        head = fh.read(12)
        if len(head) != 12:
            raise FormatError(f"{path}: truncated header")
        got_version, header_len = struct.unpack("<IQ", head)
        if got_version != version:
            raise FormatError(f"{path}: version {got_version}, expected {version}")
        raw = fh.read(header_len)
        if len(raw) != header_len:
            raise FormatError(f"{path}: truncated header JSON")
        try:
            header = json.loads(raw.decode("utf-8"))
        except ValueError as exc:
            raise FormatError(f"{path}: corrupt header JSON: {exc}") from exc
        arrays = {}
        for entry in header.get("arrays", []):
            dtype = _DTYPES.get(entry["dtype"])
            if dtype is None:
                raise FormatError(f"{path}: unknown block dtype {entry['dtype']!r}")
            shape = tuple(entry["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            blob = fh.read(nbytes)
            if len(blob) != nbytes:
                raise FormatError(f"{path}: truncated block {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
    return header, arrays
