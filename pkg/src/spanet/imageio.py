"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

import numpy as np

from .errors import FormatError


def write_pgm(path, image: np.ndarray):
    """Write a (H, W) uint8 array as binary PGM."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise FormatError(f"PGM writer needs a (H, W) uint8 array, got {img.shape} {img.dtype}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_ppm(path, image: np.ndarray):
    """Write a (H, W, 3) uint8 array as binary PPM."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise FormatError(
            f"PPM writer needs a (H, W, 3) uint8 array, got {img.shape} {img.dtype}"
        )
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _header_tokens(data: bytes, path):
    """Yield the magic, width, height, maxval tokens, skipping # comments."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError(f"truncated image header in {path}")
        if data[pos : pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise FormatError(f"unterminated comment in {path}")
            pos = nl + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    return tokens, pos + 1  # single whitespace after maxval precedes raster


def read_image(path) -> np.ndarray:
    """Read a P5/P6 file into uint8 (H, W) or (H, W, 3)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"not a binary PGM/PPM file: {path}")
    tokens, raster_at = _header_tokens(data, path)
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"malformed image header in {path}") from exc
    if w < 1 or h < 1:
        raise FormatError(f"bad image dimensions {w}x{h} in {path}")
    if maxval != 255:
        raise FormatError(f"only 8-bit images supported, maxval={maxval} in {path}")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    raster = data[raster_at : raster_at + need]
    if len(raster) != need:
        raise FormatError(
            f"truncated raster in {path}: expected {need} bytes, got {len(raster)}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, channels)).copy()
