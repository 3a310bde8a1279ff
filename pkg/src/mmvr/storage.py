"""Versioned little-endian binary containers for databases and models.

Layout of one section::

    tag[4] | u32 meta_len | meta (UTF-8 JSON, sorted keys) | u32 n_arrays | array*

and of one array::

    u16 name_len | name | u8 dtype_len | dtype (numpy str, e.g. "<f8") | u8 ndim | u64 dim* | raw bytes

A file starts with a section tag (``MMPD`` / ``MMON``) followed by ``u32 version``.
"""
import io
import json
import os
import struct
import tempfile

import numpy as np

from .errors import InputError

VERSION = 1


def _dump_meta(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_section(fh, tag, meta, arrays):
    fh.write(tag)
    blob = _dump_meta(meta)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        if a.dtype.byteorder == ">" or (a.dtype.byteorder == "=" and not np.little_endian):
            a = a.astype(a.dtype.newbyteorder("<"))
        dt = a.dtype.str.encode("ascii")
        nb = name.encode("utf-8")
        fh.write(struct.pack("<H", len(nb)) + nb)
        fh.write(struct.pack("<B", len(dt)) + dt)
        fh.write(struct.pack("<B", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(np.ascontiguousarray(a).tobytes())


def _read(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise InputError("truncated container")
    return data


def read_section(fh, tag):
    got = _read(fh, 4)
    if got != tag:
        raise InputError(f"expected section {tag!r}, found {got!r}")
    (mlen,) = struct.unpack("<I", _read(fh, 4))
    meta = json.loads(_read(fh, mlen).decode("utf-8"))
    (count,) = struct.unpack("<I", _read(fh, 4))
    arrays = {}
    for _ in range(count):
        (nl,) = struct.unpack("<H", _read(fh, 2))
        name = _read(fh, nl).decode("utf-8")
        (dl,) = struct.unpack("<B", _read(fh, 1))
        dtype = np.dtype(_read(fh, dl).decode("ascii"))
        (ndim,) = struct.unpack("<B", _read(fh, 1))
        shape = struct.unpack(f"<{ndim}Q", _read(fh, 8 * ndim))
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = np.frombuffer(_read(fh, size), dtype=dtype).reshape(shape).copy()
    return meta, arrays


def write_header(fh, magic):
    fh.write(magic)
    fh.write(struct.pack("<I", VERSION))


def read_header(fh, magic):
    got = fh.read(4)
    if got != magic:
        raise InputError(f"not a {magic.decode()} file (magic {got!r})")
    (version,) = struct.unpack("<I", _read(fh, 4))
    if version != VERSION:
        raise InputError(f"unsupported {magic.decode()} version {version}")
    return version


def atomic_write(path, data, mode="wb"):
    """Write via a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_bytes(writer):
    buf = io.BytesIO()
    writer(buf)
    return buf.getvalue()
