"""Binary netpbm I/O: P6 (RGB) and P5 (grey) with maxval 255.

Pixel values map linearly to [0,1]; ground-truth masks binarize at 128 on
read.  16-bit files are rejected.
"""

from __future__ import annotations

import numpy as np

from .errors import ImageIOError


def _read_header(data, path):
    # header tokens may be separated by whitespace and '#' comments
    tokens = []
    pos = 2  # past magic
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageIOError(f"{path}: truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ImageIOError(f"{path}: non-numeric header fields {tokens}")
    if w <= 0 or h <= 0:
        raise ImageIOError(f"{path}: bad extents {w}x{h}")
    if maxval != 255:
        raise ImageIOError(f"{path}: maxval {maxval} unsupported (only 8-bit, maxval 255)")
    return w, h, pos


def read_pgm(path):
    """Read a P5 file as an H x W float array in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise ImageIOError(f"{path}: bad magic {data[:2]!r}, expected P5")
    w, h, pos = _read_header(data, path)
    payload = data[pos : pos + w * h]
    if len(payload) != w * h:
        raise ImageIOError(f"{path}: short payload ({len(payload)} of {w * h} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.float32) / 255.0


def read_ppm(path):
    """Read a P6 file as a 3 x H x W float array in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise ImageIOError(f"{path}: bad magic {data[:2]!r}, expected P6")
    w, h, pos = _read_header(data, path)
    payload = data[pos : pos + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise ImageIOError(f"{path}: short payload ({len(payload)} of {3 * w * h} bytes)")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return img.transpose(2, 0, 1).astype(np.float32) / 255.0


def read_mask(path):
    """Read a P5 ground-truth mask, binarized at 128."""
    raw = read_pgm(path)
    return (raw * 255.0 >= 128).astype(np.float32)


def _quantize(arr):
    return np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, arr):
    """Write an H x W array in [0,1] as P5."""
    q = _quantize(arr)
    if q.ndim != 2:
        raise ImageIOError(f"write_pgm expects a 2-d array, got shape {q.shape}")
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def write_ppm(path, arr):
    """Write a 3 x H x W array in [0,1] as P6."""
    q = _quantize(arr)
    if q.ndim != 3 or q.shape[0] != 3:
        raise ImageIOError(f"write_ppm expects a 3 x H x W array, got shape {q.shape}")
    _, h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.transpose(1, 2, 0).tobytes())
