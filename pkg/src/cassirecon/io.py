"""Binary file formats: cubes (HSC1), masks (HSM1), measurements (HSMEA1),
parameter checkpoints (PGDW1), and 16-bit PGM band export.

All integers are little-endian uint32; cube/mask/measurement samples are
little-endian binary32, checkpoint values little-endian binary64.
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .physics import SpectralCube

CUBE_MAGIC = b"HSCUBE1\0"
MASK_MAGIC = b"HSMASK1\0"
MEAS_MAGIC = b"HSMEA1\0\0"
CKPT_MAGIC = b"PGDW1\0\0\0"

_U32 = struct.Struct("<I")


class FormatError(ValueError):
    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class _Reader:
    def __init__(self, path):
        self.path = path
        self.buf = Path(path).read_bytes()
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(self.path, self.pos, f"truncated {what}: need {n} bytes, {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def magic(self, expected):
        got = self.take(len(expected), "magic")
        if got != expected:
            raise FormatError(self.path, 0, f"bad magic {got!r}, expected {expected!r}")

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]

    def array(self, count, dtype, what):
        return np.frombuffer(self.take(count * np.dtype(dtype).itemsize, what), dtype=dtype).copy()

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(self.path, self.pos, f"{len(self.buf) - self.pos} trailing bytes")


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def write_cube(path, cube) -> None:
    if not isinstance(cube, SpectralCube):
        cube = SpectralCube(np.asarray(cube))
    h, w, b = cube.shape
    payload = cube.data.transpose(2, 0, 1)
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC + struct.pack("<III", h, w, b) + _f32(cube.wavelengths) + _f32(payload))


def read_cube(path) -> SpectralCube:
    r = _Reader(path)
    r.magic(CUBE_MAGIC)
    h, w, b = r.u32("height"), r.u32("width"), r.u32("bands")
    wl = r.array(b, "<f4", "wavelengths")
    data = r.array(h * w * b, "<f4", "cube payload").reshape(b, h, w).transpose(1, 2, 0)
    r.done()
    try:
        return SpectralCube(np.ascontiguousarray(data), wl)
    except ValueError as exc:
        raise FormatError(path, 20, str(exc)) from None


def _write_plane(path, magic, arr):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d array, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(magic + struct.pack("<II", *arr.shape) + _f32(arr))


def _read_plane(path, magic, what):
    r = _Reader(path)
    r.magic(magic)
    h, w = r.u32("height"), r.u32("width")
    data = r.array(h * w, "<f4", f"{what} payload").reshape(h, w)
    r.done()
    return data


def write_mask(path, mask) -> None:
    _write_plane(path, MASK_MAGIC, mask)


def read_mask(path) -> np.ndarray:
    return _read_plane(path, MASK_MAGIC, "mask")


def write_measurement(path, y) -> None:
    _write_plane(path, MEAS_MAGIC, y)


def read_measurement(path) -> np.ndarray:
    return _read_plane(path, MEAS_MAGIC, "measurement")


def write_checkpoint(path, records) -> None:
    """``records``: ordered mapping of name -> array, written as binary64."""
    items = list(records.items())
    parts = [CKPT_MAGIC, _U32.pack(len(items))]
    for name, value in items:
        value = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(value.ndim)]
        parts += [_U32.pack(d) for d in value.shape]
        parts.append(np.ascontiguousarray(value).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    r = _Reader(path)
    r.magic(CKPT_MAGIC)
    out = OrderedDict()
    for _ in range(r.u32("record count")):
        start = r.pos
        name = r.take(r.u32("name length"), "name").decode("utf-8")
        ndim = r.u32("rank")
        shape = tuple(r.u32("extent") for _ in range(ndim))
        if name in out:
            raise FormatError(path, start, f"duplicate record {name!r}")
        out[name] = r.array(int(np.prod(shape, dtype=np.int64)), "<f8", f"values of {name}").reshape(shape)
    r.done()
    return out


def write_pgm16(path, band) -> None:
    """Binary PGM (P5), maxval 65535, big-endian samples, linear from [0, 1]."""
    band = np.asarray(band, dtype=np.float64)
    h, w = band.shape
    q = np.round(np.clip(band, 0.0, 1.0) * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes())


def read_pgm16(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        fields.append(buf[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 65535:
        raise FormatError(path, 0, "not a 16-bit P5 PGM")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(buf[pos + 1:pos + 1 + 2 * w * h], dtype=">u2")
    if data.size != w * h:
        raise FormatError(path, pos + 1, "truncated PGM payload")
    return data.reshape(h, w).astype(np.float64) / 65535.0
