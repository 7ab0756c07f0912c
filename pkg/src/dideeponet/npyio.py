"""NPY / NPZ reading and writing with strict validation.

Header parsing and array serialization go through ``numpy.lib.format``; this
module adds deterministic ZIP members (fixed timestamps, so identical arrays
give identical bytes), dtype whitelisting and byte offsets in errors.
"""

from __future__ import annotations

import io
import zipfile
from tokenize import TokenError

import numpy as np
from numpy.lib import format as npformat

from .errors import FormatError

MAGIC = b"\x93NUMPY"
FLOAT_DTYPES = (np.dtype("<f8"), np.dtype("<f4"))
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _read_npy_stream(fh, allowed=None, label="array"):
    magic = fh.read(6)
    if magic != MAGIC:
        raise FormatError(f"{label}: bad NPY magic {magic!r}", offset=0)
    ver = fh.read(2)
    if len(ver) != 2 or ver[0] not in (1, 2, 3):
        raise FormatError(f"{label}: unsupported NPY version {tuple(ver)}", offset=6)
    try:
        if ver[0] == 1:
            shape, fortran, dtype = npformat.read_array_header_1_0(fh)
        else:
            shape, fortran, dtype = npformat.read_array_header_2_0(fh)
    except (ValueError, SyntaxError, TokenError) as exc:
        raise FormatError(f"{label}: malformed NPY header: {exc}", offset=8) from None
    data_offset = fh.tell() if hasattr(fh, "tell") else None
    if dtype.hasobject:
        raise FormatError(f"{label}: object arrays are not accepted", offset=8)
    if allowed is not None and dtype not in allowed:
        raise FormatError(f"{label}: dtype {dtype.str} not in {[d.str for d in allowed]}", offset=8)
    count = int(np.prod(shape, dtype=np.int64))
    nbytes = count * dtype.itemsize
    raw = fh.read(nbytes)
    if len(raw) != nbytes:
        off = None if data_offset is None else data_offset + len(raw)
        raise FormatError(f"{label}: truncated data, expected {nbytes} bytes, got {len(raw)}",
                          offset=off)
    arr = np.frombuffer(raw, dtype=dtype, count=count)
    return arr.reshape(shape, order="F" if fortran else "C").copy()


def read_npy(path, allowed=None):
    with open(path, "rb") as fh:
        return _read_npy_stream(fh, allowed, label=str(path))


def npy_bytes(arr):
    buf = io.BytesIO()
    npformat.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def write_npy(path, arr):
    with open(path, "wb") as fh:
        fh.write(npy_bytes(arr))


def write_npz(path, arrays, texts=None, compress=True):
    """Write named arrays (members ``<name>.npy``) plus optional text members."""
    mode = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    with zipfile.ZipFile(path, "w", compression=mode) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.compress_type = mode
            info.external_attr = 0o644 << 16
            zf.writestr(info, npy_bytes(arr))
        for name, text in (texts or {}).items():
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = mode
            info.external_attr = 0o644 << 16
            zf.writestr(info, text.encode("utf-8"))


def read_npz(path, allowed=None):
    """Return ``(arrays, texts)``: ``.npy`` members by stem, other members as text."""
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path}: not a ZIP/NPZ container ({exc})", offset=0) from None
    arrays, texts = {}, {}
    with zf:
        for info in zf.infolist():
            with zf.open(info) as fh:
                if info.filename.endswith(".npy"):
                    label = f"{path}:{info.filename}"
                    try:
                        arrays[info.filename[:-4]] = _read_npy_stream(fh, allowed, label)
                    except FormatError as exc:
                        # offsets are relative to the member; add the member's data start
                        base = info.header_offset + 30 + len(info.filename.encode()) + len(info.extra)
                        if exc.offset is not None and info.compress_type == zipfile.ZIP_STORED:
                            raise FormatError(str(exc).rsplit(" (at byte", 1)[0],
                                              offset=base + exc.offset) from None
                        raise
                else:
                    texts[info.filename] = fh.read().decode("utf-8")
    return arrays, texts
