"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PRN1"
    payload:
        u32 version
        u32 n_scales, n_scales * u32 scale
        f64 gamma_upper, f64 gamma_low
        u32 dilation_rate
        u8 rolling, u32 depth_l, u32 depth_m
        f64 slope, f64 input_offset, u8 prior_norm code
        u32 n_layers
        per layer: u16 name length, name (utf-8), u8 kind (0 conv, 1 deconv),
                   4 * u32 weight shape, u32 dilation, u32 stride, 2 * u32 padding
        per layer, same order: float32 weights, float32 bias
    u32 CRC32 of payload
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from . import tensorops as ops
from .prior import PRIOR_NORMS, Thresholds
from .prnet import PrnModel

__all__ = ["CheckpointError", "CheckpointFormatError", "CheckpointVersionError", "ChecksumError",
           "save_checkpoint", "load_checkpoint", "dumps", "loads"]

MAGIC = b"PRN1"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def dumps(model: PrnModel) -> bytes:
    parts = [struct.pack("<I", VERSION), struct.pack("<I", len(model.scales))]
    parts += [struct.pack("<I", s) for s in model.scales]
    parts.append(struct.pack("<dd", model.thresholds.gamma_upper, model.thresholds.gamma_low))
    parts.append(struct.pack("<I", model.dilation_rate))
    parts.append(struct.pack("<BII", int(model.rolling), model.depth_l, model.depth_m))
    parts.append(struct.pack("<ddB", model.slope, model.input_offset, PRIOR_NORMS.index(model.prior_norm)))
    parts.append(struct.pack("<I", len(model.layers)))
    for name, p in model.layers.items():
        raw = name.encode()
        kind = 1 if p.spec.stride > 1 else 0
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B4III2I", kind, *p.weights.shape, p.spec.dilation, p.spec.stride, *p.spec.padding))
    for p in model.layers.values():
        parts.append(np.ascontiguousarray(p.weights, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(p.bias, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointFormatError("checkpoint is truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def loads(blob: bytes) -> PrnModel:
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r}; not a PRN checkpoint")
    if len(blob) < 12:
        raise CheckpointFormatError("checkpoint is truncated")
    payload, (crc,) = blob[4:-4], struct.unpack("<I", blob[-4:])
    r = _Reader(payload)
    (version,) = r.take("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    if zlib.crc32(payload) != crc:
        raise ChecksumError("checkpoint CRC32 mismatch")
    (n_scales,) = r.take("<I")
    scales = r.take(f"<{n_scales}I")
    gamma_upper, gamma_low = r.take("<dd")
    (dilation_rate,) = r.take("<I")
    rolling, depth_l, depth_m = r.take("<BII")
    slope, input_offset, norm_code = r.take("<ddB")
    (n_layers,) = r.take("<I")
    table = []
    for _ in range(n_layers):
        (name_len,) = r.take("<H")
        name = r.raw(name_len).decode()
        kind, o, i, kh, kw, dilation, stride, ph, pw = r.take("<B4III2I")
        if kind == 1:
            spec = ops.ConvSpec(i, o, (kh, kw), stride=stride, padding=(ph, pw))
        else:
            spec = ops.ConvSpec(i, o, (kh, kw), dilation=dilation)
        table.append((name, spec))
    layers = {}
    for name, spec in table:
        n_w = int(np.prod(spec.weight_shape))
        w = np.frombuffer(r.raw(4 * n_w), dtype="<f4").reshape(spec.weight_shape).astype(np.float32)
        b = np.frombuffer(r.raw(4 * spec.out_channels), dtype="<f4").astype(np.float32)
        layers[name] = ops.LayerParams(w, b, spec)
    if r.pos != len(payload):
        raise CheckpointFormatError("trailing bytes after weight blobs")
    return PrnModel(
        layers,
        Thresholds(gamma_upper, gamma_low),
        tuple(scales),
        dilation_rate,
        bool(rolling),
        depth_l,
        depth_m,
        slope,
        PRIOR_NORMS[norm_code],
        input_offset,
    )


def save_checkpoint(model: PrnModel, path) -> None:
    Path(path).write_bytes(dumps(model))


def load_checkpoint(path) -> PrnModel:
    return loads(Path(path).read_bytes())
