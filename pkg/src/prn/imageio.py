"""Minimal 8-bit PNG and binary PGM/PPM codec.

Only what the SR pipeline needs: greyscale or RGB samples at bit depth 8,
non-interlaced. Anything else raises :class:`UnsupportedImageError` rather than
being silently converted.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

__all__ = ["ImageFormatError", "UnsupportedImageError", "read_pixels", "write_pixels"]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(IOError):
    """File is truncated, corrupt, or not an image format we know."""


class UnsupportedImageError(ImageFormatError):
    """Well-formed file using a feature outside the supported subset."""


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
    return np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    if len(raw) != height * (stride + 1):
        raise ImageFormatError("decompressed PNG data has the wrong length")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(height, stride + 1)
    out = np.zeros((height, stride), dtype=np.int32)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(height):
        ftype = rows[y, 0]
        line = rows[y, 1:].astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 1:
            cur = line.copy()
            for x in range(bpp, stride):
                cur[x] = (cur[x] + cur[x - bpp]) & 0xFF
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype == 3:
            cur = line.copy()
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                cur[x] = (cur[x] + ((left + prev[x]) >> 1)) & 0xFF
        elif ftype == 4:
            cur = line.copy()
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                upleft = prev[x - bpp] if x >= bpp else 0
                cur[x] = (cur[x] + int(_paeth(left, prev[x], upleft))) & 0xFF
        else:
            raise ImageFormatError(f"invalid PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out.astype(np.uint8)


def _read_png(data: bytes) -> np.ndarray:
    pos = len(PNG_SIGNATURE)
    header = None
    idat = []
    seen_end = False
    while pos < len(data):
        if pos + 8 > len(data):
            raise ImageFormatError("truncated PNG chunk header")
        length, ctype = struct.unpack(">I4s", data[pos : pos + 8])
        body = data[pos + 8 : pos + 8 + length]
        crc_bytes = data[pos + 8 + length : pos + 12 + length]
        if len(body) != length or len(crc_bytes) != 4:
            raise ImageFormatError("truncated PNG chunk")
        if zlib.crc32(ctype + body) != struct.unpack(">I", crc_bytes)[0]:
            raise ImageFormatError(f"CRC mismatch in PNG chunk {ctype!r}")
        pos += 12 + length
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            seen_end = True
            break
    if header is None or not seen_end:
        raise ImageFormatError("PNG is missing IHDR or IEND")
    width, height, depth, color, _comp, _filt, interlace = header
    if depth != 8:
        raise UnsupportedImageError(f"unsupported PNG bit depth {depth}; only 8-bit samples are handled")
    channels = {0: 1, 2: 3}.get(color)
    if channels is None:
        raise UnsupportedImageError(f"unsupported PNG colour type {color}; only greyscale and RGB")
    if interlace:
        raise UnsupportedImageError("interlaced PNG is not supported")
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"corrupt PNG image data: {exc}") from exc
    pixels = _unfilter(raw, height, width * channels, channels)
    return pixels.reshape(height, width, channels)


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", zlib.crc32(ctype + body))


def _write_png(pixels: np.ndarray) -> bytes:
    height, width, channels = pixels.shape
    color = {1: 0, 3: 2}[channels]
    rows = pixels.reshape(height, width * channels)
    raw = np.concatenate([np.zeros((height, 1), dtype=np.uint8), rows], axis=1).tobytes()
    ihdr = struct.pack(">IIBBBBB", width, height, 8, color, 0, 0, 0)
    return PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(raw, 6)) + _chunk(b"IEND", b"")


def _pnm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PNM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def _read_pnm(data: bytes) -> np.ndarray:
    channels = 1 if data[:2] == b"P5" else 3
    tokens, pos = _pnm_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError("malformed PNM header") from exc
    if maxval > 255:
        raise UnsupportedImageError(f"unsupported PNM maxval {maxval}; only 8-bit samples are handled")
    n = width * height * channels
    body = data[pos : pos + n]
    if len(body) != n:
        raise ImageFormatError(f"truncated PNM data: expected {n} bytes, found {len(body)}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)
    if maxval != 255:
        pixels = np.round(pixels.astype(np.float64) * 255 / maxval).astype(np.uint8)
    return pixels.copy()


def read_pixels(path) -> np.ndarray:
    """Decode a PNG/PGM/PPM file into a uint8 array of shape (H, W, C), C in {1, 3}."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    if data.startswith(PNG_SIGNATURE):
        return _read_png(data)
    if data[:2] in (b"P5", b"P6"):
        return _read_pnm(data)
    raise ImageFormatError(f"{path}: not a PNG or binary PGM/PPM file")


def write_pixels(pixels: np.ndarray, path) -> None:
    """Encode uint8 pixels; the format follows the suffix (.png, .pgm, .ppm)."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise UnsupportedImageError(f"only uint8 samples can be written, got {pixels.dtype}")
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
        raise UnsupportedImageError(f"cannot write array of shape {pixels.shape}")
    pixels = np.ascontiguousarray(pixels)
    path = Path(path)
    suffix = path.suffix.lower()
    height, width, channels = pixels.shape
    if suffix == ".png":
        blob = _write_png(pixels)
    elif suffix in (".pgm", ".ppm"):
        if (suffix == ".pgm") != (channels == 1):
            raise UnsupportedImageError(f"{suffix} needs {'1' if suffix == '.pgm' else '3'} channel(s)")
        magic = b"P5" if channels == 1 else b"P6"
        blob = magic + f"\n{width} {height}\n255\n".encode() + pixels.tobytes()
    else:
        raise UnsupportedImageError(f"unknown image suffix {path.suffix!r}")
    path.write_bytes(blob)
