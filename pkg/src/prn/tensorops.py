"""Dense 4-D tensor numerics for the PRN network.

Tensors are plain ``numpy`` arrays laid out as (batch, channels, height, width).
Convolutions are stride-1 "same" correlations (optionally dilated) computed
through an im2col gather and one GEMM; the transposed convolution scatters
per-tap contributions, which is the same operator as zero-insertion followed
by an ordinary convolution, then crops the result to exactly ``stride * h``.

All functions preserve the floating dtype of their inputs. The network runs in
float32; gradient checks run the same code in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionError",
    "ConvSpec",
    "LayerParams",
    "conv2d_forward",
    "conv2d_backward",
    "deconv2d_forward",
    "deconv2d_backward",
    "deconv_geometry",
    "leaky_relu",
    "leaky_relu_backward",
    "xavier_init",
    "cubic_weight",
    "bicubic_deconv_init",
    "SUPPORTED_SCALES",
]

SUPPORTED_SCALES = (2, 3, 4)
CUBIC_A = -0.5


class DimensionError(ValueError):
    """Raised when tensor shapes do not agree with a layer's declaration."""


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    dilation: int = 1
    stride: int = 1
    padding: tuple[int, int] | None = None

    def __post_init__(self):
        kh, kw = self.kernel
        if kh < 1 or kw < 1:
            raise ValueError(f"kernel must be positive, got {self.kernel}")
        if self.dilation < 1 or self.stride < 1:
            raise ValueError("dilation and stride must be positive integers")
        if self.padding is None:
            if self.stride != 1:
                raise ValueError("transposed layers must give explicit padding")
            if kh % 2 == 0 or kw % 2 == 0:
                raise ValueError(f"same-padding convolution needs odd kernels, got {self.kernel}")
            pad = (self.dilation * (kh - 1) // 2, self.dilation * (kw - 1) // 2)
            object.__setattr__(self, "padding", pad)

    @property
    def extent(self) -> tuple[int, int]:
        """Spatial span of the (dilated) kernel footprint."""
        kh, kw = self.kernel
        return ((kh - 1) * self.dilation + 1, (kw - 1) * self.dilation + 1)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, *self.kernel)


@dataclass
class LayerParams:
    weights: np.ndarray
    bias: np.ndarray
    spec: ConvSpec = field(repr=False)

    def __post_init__(self):
        if tuple(self.weights.shape) != self.spec.weight_shape:
            raise DimensionError(
                f"weight shape {self.weights.shape} != declared {self.spec.weight_shape}"
            )
        if self.bias.shape != (self.spec.out_channels,):
            raise DimensionError(f"bias shape {self.bias.shape} != ({self.spec.out_channels},)")

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.bias.copy(), self.spec)

    def astype(self, dtype) -> "LayerParams":
        return LayerParams(self.weights.astype(dtype), self.bias.astype(dtype), self.spec)


def _check_input(x: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise DimensionError(f"expected a 4-D tensor, got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, layer expects {spec.in_channels}"
        )


def _im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Gather shifted copies of ``x`` into a (C*kh*kw, N*H*W) matrix."""
    n, c, h, w = x.shape
    kh, kw = spec.kernel
    d = spec.dilation
    ph, pw = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # channel-major so the row order matches weights.reshape(out, -1)
    xp = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, h, w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i * d : i * d + h, j * d : j * d + w]
    return cols.reshape(c * kh * kw, n * h * w)


def _col2im(cols: np.ndarray, shape: tuple[int, ...], spec: ConvSpec) -> np.ndarray:
    n, c, h, w = shape
    kh, kw = spec.kernel
    d = spec.dilation
    ph, pw = spec.padding
    cols = cols.reshape(c, kh, kw, n, h, w)
    out = np.zeros((c, n, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i * d : i * d + h, j * d : j * d + w] += cols[:, i, j]
    return out[:, :, ph : ph + h, pw : pw + w].transpose(1, 0, 2, 3)


def conv2d_forward(x: np.ndarray, params: LayerParams, cols: np.ndarray | None = None) -> np.ndarray:
    """Stride-1 same-size correlation ``y = W * x + b``.

    ``cols`` may carry a precomputed im2col matrix (the training path caches it).
    """
    spec = params.spec
    _check_input(x, spec)
    if spec.stride != 1:
        raise DimensionError("conv2d_forward only supports stride 1")
    n, _, h, w = x.shape
    eh, ew = spec.extent
    if eh > h + 2 * spec.padding[0] or ew > w + 2 * spec.padding[1]:
        raise DimensionError(f"kernel extent {spec.extent} exceeds padded input {h}x{w}")
    if cols is None:
        cols = _im2col(x, spec)
    wmat = params.weights.reshape(spec.out_channels, -1).astype(x.dtype, copy=False)
    out = wmat @ cols
    out = out.reshape(spec.out_channels, n, h, w).transpose(1, 0, 2, 3)
    return out + params.bias.astype(x.dtype, copy=False)[None, :, None, None]


def conv2d_backward(
    x: np.ndarray,
    params: LayerParams,
    grad_out: np.ndarray,
    cols: np.ndarray | None = None,
    need_input_grad: bool = True,
):
    """Gradients of a same-size convolution.

    Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is
    ``None`` when ``need_input_grad`` is false (first layer of a network).
    """
    spec = params.spec
    _check_input(x, spec)
    n, _, h, w = x.shape
    expected = (n, spec.out_channels, h, w)
    if grad_out.shape != expected:
        raise DimensionError(f"grad_out shape {grad_out.shape} != output shape {expected}")
    if cols is None:
        cols = _im2col(x, spec)
    g = grad_out.transpose(1, 0, 2, 3).reshape(spec.out_channels, -1)
    grad_w = (g @ cols.T).reshape(spec.weight_shape)
    grad_b = grad_out.sum(axis=(0, 2, 3), dtype=np.float64).astype(grad_out.dtype)
    grad_x = None
    if need_input_grad:
        wmat = params.weights.reshape(spec.out_channels, -1).astype(x.dtype, copy=False)
        grad_x = _col2im(wmat.T @ g, x.shape, spec)
    return grad_x, grad_w, grad_b


def deconv_geometry(stride: int) -> tuple[int, int]:
    """Kernel size and crop offset of the transposed convolution for ``stride``.

    The kernel spans the full bicubic footprint (4 taps per input pixel along
    each axis) so a bicubic-initialised layer reproduces bicubic upsampling
    exactly. Output pixel ``o`` receives ``x[i] * W[o - stride*i + offset]``,
    which places high-res pixel centres at ``(o + 0.5) / stride - 0.5`` in
    low-res coordinates.
    """
    if stride not in SUPPORTED_SCALES:
        raise ValueError(f"unsupported deconvolution stride {stride}; expected one of {SUPPORTED_SCALES}")
    first_tap = math.floor(stride / 2 - 0.5 - 2 * stride) + 1
    return 4 * stride, -first_tap


def deconv_spec(in_channels: int, out_channels: int, stride: int) -> ConvSpec:
    k, offset = deconv_geometry(stride)
    return ConvSpec(in_channels, out_channels, (k, k), stride=stride, padding=(offset, offset))


def _check_deconv(x: np.ndarray, params: LayerParams, stride: int) -> None:
    _check_input(x, params.spec)
    if stride not in SUPPORTED_SCALES:
        raise ValueError(f"unsupported deconvolution stride {stride}; expected one of {SUPPORTED_SCALES}")
    if params.spec.stride != stride:
        raise DimensionError(f"layer was built for stride {params.spec.stride}, called with {stride}")


def deconv2d_forward(x: np.ndarray, params: LayerParams, stride: int) -> np.ndarray:
    """Transposed convolution producing exactly ``(stride*h, stride*w)`` outputs."""
    _check_deconv(x, params, stride)
    spec = params.spec
    n, c, h, w = x.shape
    kh, kw = spec.kernel
    off_h, off_w = spec.padding
    cout = spec.out_channels
    # (cout*kh*kw, c) @ (c, n*h*w): every tap's contribution from every input pixel
    wmat = params.weights.transpose(0, 2, 3, 1).reshape(cout * kh * kw, c).astype(x.dtype, copy=False)
    contrib = (wmat @ x.transpose(1, 0, 2, 3).reshape(c, -1)).reshape(cout, kh, kw, n, h, w)
    full = np.zeros((cout, n, stride * (h - 1) + kh, stride * (w - 1) + kw), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            full[:, :, a : a + stride * h : stride, b : b + stride * w : stride] += contrib[:, a, b]
    out = full[:, :, off_h : off_h + stride * h, off_w : off_w + stride * w]
    out = out.transpose(1, 0, 2, 3) + params.bias.astype(x.dtype, copy=False)[None, :, None, None]
    return np.ascontiguousarray(out)


def deconv2d_backward(
    x: np.ndarray,
    params: LayerParams,
    stride: int,
    grad_out: np.ndarray,
    need_input_grad: bool = True,
):
    _check_deconv(x, params, stride)
    spec = params.spec
    n, c, h, w = x.shape
    kh, kw = spec.kernel
    off_h, off_w = spec.padding
    cout = spec.out_channels
    expected = (n, cout, stride * h, stride * w)
    if grad_out.shape != expected:
        raise DimensionError(f"grad_out shape {grad_out.shape} != output shape {expected}")
    full = np.zeros((cout, n, stride * (h - 1) + kh, stride * (w - 1) + kw), dtype=grad_out.dtype)
    full[:, :, off_h : off_h + stride * h, off_w : off_w + stride * w] = grad_out.transpose(1, 0, 2, 3)
    gcontrib = np.empty((cout, kh, kw, n, h, w), dtype=grad_out.dtype)
    for a in range(kh):
        for b in range(kw):
            gcontrib[:, a, b] = full[:, :, a : a + stride * h : stride, b : b + stride * w : stride]
    gmat = gcontrib.reshape(cout * kh * kw, -1)
    xmat = x.transpose(1, 0, 2, 3).reshape(c, -1)
    grad_w = (gmat @ xmat.T).reshape(cout, kh, kw, c).transpose(0, 3, 1, 2)
    grad_b = grad_out.sum(axis=(0, 2, 3), dtype=np.float64).astype(grad_out.dtype)
    grad_x = None
    if need_input_grad:
        wmat = params.weights.transpose(0, 2, 3, 1).reshape(cout * kh * kw, c).astype(x.dtype, copy=False)
        grad_x = (wmat.T @ gmat).reshape(c, n, h, w).transpose(1, 0, 2, 3)
    return grad_x, np.ascontiguousarray(grad_w), grad_b


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    return np.where(x >= 0, x, x * np.asarray(slope, dtype=x.dtype))


def leaky_relu_backward(x: np.ndarray, grad_out: np.ndarray, slope: float = 0.2) -> np.ndarray:
    """Gradient through a leaky ReLU evaluated at pre-activation ``x``."""
    return np.where(x >= 0, grad_out, grad_out * np.asarray(slope, dtype=grad_out.dtype))


def xavier_init(spec: ConvSpec, rng_seed=None, dtype=np.float32) -> LayerParams:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero bias.

    ``rng_seed`` is anything ``np.random.default_rng`` accepts, including a
    ``Generator`` shared across layers.
    """
    rng = np.random.default_rng(rng_seed)
    kh, kw = spec.kernel
    fan_in = spec.in_channels * kh * kw
    fan_out = spec.out_channels * kh * kw
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-limit, limit, size=spec.weight_shape).astype(dtype)
    return LayerParams(weights, np.zeros(spec.out_channels, dtype=dtype), spec)


def cubic_weight(t, a: float = CUBIC_A):
    """Keys cubic convolution kernel (a = -0.5 is Catmull-Rom)."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def bicubic_taps(scale: int) -> np.ndarray:
    """1-D bicubic upsampling taps laid out for :func:`deconv_geometry`."""
    k, offset = deconv_geometry(scale)
    m = np.arange(k) - offset
    return cubic_weight((m + 0.5 - scale / 2) / scale)


def bicubic_deconv_init(scale: int, in_channels: int = 64, out_channels: int = 1, dtype=np.float32) -> LayerParams:
    """Transposed-conv layer whose untrained output is bicubic upsampling.

    Every input-channel slice carries ``kernel / in_channels``, so the layer
    upsamples the channel mean of its input.
    """
    if scale not in SUPPORTED_SCALES:
        raise ValueError(f"unsupported scale {scale}; expected one of {SUPPORTED_SCALES}")
    taps = bicubic_taps(scale)
    kernel = np.outer(taps, taps) / in_channels
    spec = deconv_spec(in_channels, out_channels, scale)
    weights = np.broadcast_to(kernel, spec.weight_shape).astype(dtype)
    return LayerParams(weights, np.zeros(out_channels, dtype=dtype), spec)
