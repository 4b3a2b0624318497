"""Binary PPM (P6) and PGM (P5) reading/writing, maxval 255."""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .errors import DatasetError


def _atomic_write_bytes(path, payload):
    """Write to a temp file in the same directory, then rename over path."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ppm(path, image_u8):
    """image_u8: (3, H, W) or (H, W, 3) uint8."""
    arr = np.asarray(image_u8, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[0] == 3:
        arr = arr.transpose(1, 2, 0)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    _atomic_write_bytes(path, b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())


def write_pgm(path, gray_u8):
    arr = np.asarray(gray_u8, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale image, got shape {arr.shape}")
    h, w = arr.shape
    _atomic_write_bytes(path, b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def _read_header(data, path):
    """Parse magic, width, height, maxval; returns them plus the body offset."""
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(data):
            if data[pos:pos + 1].isspace():
                pos += 1
            elif data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos:pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated header")
        return data[start:pos]

    magic = next_token()
    width = int(next_token())
    height = int(next_token())
    maxval = int(next_token())
    pos += 1  # single whitespace byte after maxval
    if maxval != 255:
        raise DatasetError(f"{path}: unsupported maxval {maxval}")
    return magic, width, height, pos


def read_ppm(path):
    """Returns (3, H, W) uint8."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    magic, w, h, offset = _read_header(data, path)
    if magic != b"P6":
        raise DatasetError(f"{path}: expected P6 magic, got {magic!r}")
    body = data[offset:offset + 3 * w * h]
    if len(body) != 3 * w * h:
        raise DatasetError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)


def read_pgm(path):
    """Returns (H, W) uint8."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read mask {path}: {exc}") from exc
    magic, w, h, offset = _read_header(data, path)
    if magic != b"P5":
        raise DatasetError(f"{path}: expected P5 magic, got {magic!r}")
    body = data[offset:offset + w * h]
    if len(body) != w * h:
        raise DatasetError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)
