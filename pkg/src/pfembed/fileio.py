"""Binary netpbm images and the PFEB channel container.

PFEB layout: ``b"PFEB"``, then little-endian uint32 width, height, d,
then ``width * height * d`` little-endian float64 values, channel-major
(all of channel 0 in row-major pixel order, then channel 1, ...).
"""

from __future__ import annotations

import csv
import os
import struct

import numpy as np

PFEB_MAGIC = b"PFEB"


class NetpbmError(ValueError):
    pass


def _read_header(data: bytes, path) -> tuple[bytes, list[int], int]:
    """Parse magic plus three integer fields; returns (magic, [w, h, maxval], offset)."""
    magic = data[:2]
    pos = 2
    vals = []
    while len(vals) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise NetpbmError(f"{path}: malformed header")
        vals.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise NetpbmError(f"{path}: malformed header")
    return magic, vals, pos + 1


def read_netpbm(path) -> tuple[np.ndarray, int]:
    """Read binary P5/P6; returns ``(raw integer array, maxval)``.

    P5 gives ``(h, w)``, P6 gives ``(h, w, 3)``.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    magic, (w, h, maxval), off = _read_header(data, path)
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"{path}: unsupported format {magic!r}")
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise NetpbmError(f"{path}: bad dimensions or maxval")
    chans = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * chans
    if len(data) - off < count * dtype.itemsize:
        raise NetpbmError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=off).astype(np.int64)
    if arr.max(initial=0) > maxval:
        raise NetpbmError(f"{path}: sample exceeds maxval")
    shape = (h, w, 3) if chans == 3 else (h, w)
    return arr.reshape(shape), maxval


def read_image(path) -> np.ndarray:
    """Image scaled to [0, 1]: ``(h, w, 3)`` for P6, ``(h, w)`` for P5."""
    raw, maxval = read_netpbm(path)
    return raw.astype(np.float64) / maxval


def read_labels(path) -> np.ndarray:
    """Label map from a P5 file; gray value = label."""
    raw, _ = read_netpbm(path)
    if raw.ndim != 2:
        raise NetpbmError(f"{path}: label maps must be grayscale (P5)")
    return raw


def write_pgm(path, arr, maxval: int | None = None) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if maxval is None:
        maxval = 255 if arr.max(initial=0) <= 255 else 65535
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise ValueError(f"values outside [0, {maxval}]")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def write_ppm(path, img) -> None:
    """8-bit P6 from a float image in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM data must be (h, w, 3)")
    h, w, _ = img.shape
    q = np.rint(np.clip(img, 0, 1) * 255).astype("u1")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def write_labels(path, labels) -> None:
    """Label map as 16-bit P5 (maxval 65535)."""
    labels = np.asarray(labels)
    if labels.max(initial=0) > 65535:
        raise ValueError("too many labels for a 16-bit map")
    write_pgm(path, labels, maxval=65535)


FLAT_RTOL = 1e-8


def is_flat(y: np.ndarray) -> bool:
    """Spread within rounding noise of the channel's magnitude."""
    lo, hi = float(y.min()), float(y.max())
    return hi - lo <= FLAT_RTOL * max(abs(lo), abs(hi))


def preview_channel(y: np.ndarray) -> np.ndarray:
    """Affine map of ``[min, max]`` to ``[0, 255]``; a flat channel maps to 128."""
    lo, hi = float(y.min()), float(y.max())
    if is_flat(y):
        return np.full(y.shape, 128, dtype=np.uint8)
    return np.rint((y - lo) / (hi - lo) * 255).astype(np.uint8)


def write_pfeb(path, y: np.ndarray, width: int, height: int) -> None:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != width * height:
        raise ValueError(f"{y.shape[0]} rows do not match a {width}x{height} grid")
    with open(path, "wb") as fh:
        fh.write(PFEB_MAGIC + struct.pack("<III", width, height, y.shape[1]))
        fh.write(np.ascontiguousarray(y.T, dtype="<f8").tobytes())


def read_pfeb(path) -> tuple[np.ndarray, int, int]:
    """Returns ``(y, width, height)`` with ``y`` of shape ``(width*height, d)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != PFEB_MAGIC:
        raise NetpbmError(f"{path}: not a PFEB file")
    width, height, d = struct.unpack("<III", data[4:16])
    n = width * height
    if len(data) != 16 + 8 * n * d:
        raise NetpbmError(f"{path}: expected {n * d} values")
    vals = np.frombuffer(data, dtype="<f8", offset=16).astype(np.float64)
    return vals.reshape(d, n).T.copy(), width, height


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def stem(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]
