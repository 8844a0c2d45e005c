"""Patch-wise rolling network: stage parameters, routed forward paths and FLOPs.

Layer inventory (default depths)::

    theta_l     5x5 conv 1->64                    regular early stage
    theta_m     2 x 3x3 conv 64->64               regular middle stage
    theta_s     2 x 3x3 conv 64->64 + 1x1 shrink  late stage
    theta_l_D   5x5 conv 1->64, dilated           early stage for mild/moderate
    theta_m_D   2 x 3x3 conv 64->64, dilated      middle stage for moderate
    theta_up    one 64->1 transposed conv per scale factor

Severe patches run theta_l -> theta_m -> theta_s -> theta_up; moderate patches
exit after theta_l_D -> theta_m_D; mild patches after theta_l_D alone. With
rolling disabled the dilated banks do not exist and the early exits read the
regular theta_l / theta_m instead.

Patches are shifted by ``-input_offset`` on the way in and back on the way out
so the zero padding of every convolution sits near the mean grey level.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensorops as ops
from .imagepipe import (
    ColorImage,
    ColorSpace,
    bicubic_resize,
    crop_patches,
    patch_size_for_scale,
    reassemble,
    rgb_to_ycbcr,
    ycbcr_to_rgb,
)
from .prior import DEFAULT_THRESHOLDS, Difficulty, Thresholds, classify, gradient_prior

__all__ = [
    "PrnModel",
    "RouteTrace",
    "build_model",
    "stage_of",
    "path_layers",
    "path_stages",
    "forward",
    "forward_mild",
    "forward_moderate",
    "forward_severe",
    "forward_train",
    "backward_train",
    "route_patch",
    "super_resolve_plane",
    "super_resolve_image",
    "count_flops",
    "layer_macs",
]

CHANNELS = 64
SLOPE = 0.2


def stage_of(layer_name: str) -> str:
    """Map a layer name such as ``theta_m_D.1`` or ``theta_up.x3`` to its stage label."""
    stage, _, rest = layer_name.partition(".")
    if stage == "theta_up":
        return f"theta_up[{rest[1:]}]"
    return stage


@dataclass
class PrnModel:
    layers: dict[str, ops.LayerParams]
    thresholds: Thresholds = DEFAULT_THRESHOLDS
    scales: tuple[int, ...] = (3,)
    dilation_rate: int = 2
    rolling: bool = True
    depth_l: int = 1
    depth_m: int = 2
    slope: float = SLOPE
    prior_norm: str = "l1_mean"
    input_offset: float = 0.5

    def __post_init__(self):
        self.scales = tuple(int(s) for s in self.scales)
        if not self.scales or not set(self.scales) <= set(ops.SUPPORTED_SCALES):
            raise ValueError(f"scales must be a non-empty subset of {ops.SUPPORTED_SCALES}, got {self.scales}")
        for s in self.scales:
            if f"theta_up.x{s}" not in self.layers:
                raise ValueError(f"model has no deconvolution for scale {s}")

    def copy(self) -> "PrnModel":
        layers = {name: p.copy() for name, p in self.layers.items()}
        return PrnModel(
            layers, self.thresholds, self.scales, self.dilation_rate, self.rolling,
            self.depth_l, self.depth_m, self.slope, self.prior_norm, self.input_offset,
        )

    def with_thresholds(self, thresholds: Thresholds) -> "PrnModel":
        """Shallow copy sharing weights but routing with ``thresholds``."""
        return PrnModel(
            self.layers, thresholds, self.scales, self.dilation_rate, self.rolling,
            self.depth_l, self.depth_m, self.slope, self.prior_norm, self.input_offset,
        )

    def stage_layers(self, stage: str) -> list[str]:
        return [name for name in self.layers if stage_of(name) == stage]

    def patch_size(self, scale: int) -> int:
        """High-res patch edge for ``scale`` (54, or 56 for x4)."""
        return patch_size_for_scale(scale)

    def tag(self, prior: float) -> Difficulty:
        return classify(prior, self.thresholds)


@dataclass
class RouteTrace:
    """What one patch did on its way through the network."""

    tag: Difficulty
    prior: float
    exit: str
    macs: int
    wall_time: float
    touched: frozenset = field(default_factory=frozenset)


def _stage_specs(depth_l: int, depth_m: int, channels: int):
    early = [ops.ConvSpec(1, channels, (5, 5))]
    early += [ops.ConvSpec(channels, channels, (3, 3)) for _ in range(depth_l - 1)]
    middle = [ops.ConvSpec(channels, channels, (3, 3)) for _ in range(depth_m)]
    return early, middle


def build_model(
    scales=(3,),
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    dilation_rate: int = 2,
    rolling: bool = True,
    depth_l: int = 1,
    depth_m: int = 2,
    seed=0,
    channels: int = CHANNELS,
    prior_norm: str = "l1_mean",
    input_offset: float = 0.5,
) -> PrnModel:
    """Xavier-initialised convolutions and bicubic-initialised deconvolutions."""
    if depth_l < 1 or depth_m < 1:
        raise ValueError("stage depths must be at least 1")
    if dilation_rate < 1:
        raise ValueError("dilation_rate must be a positive integer")
    rng = np.random.default_rng(seed)
    early, middle = _stage_specs(depth_l, depth_m, channels)
    layers: dict[str, ops.LayerParams] = {}
    for i, spec in enumerate(early):
        layers[f"theta_l.{i}"] = ops.xavier_init(spec, rng)
    for i, spec in enumerate(middle):
        layers[f"theta_m.{i}"] = ops.xavier_init(spec, rng)
    for i in range(2):
        layers[f"theta_s.{i}"] = ops.xavier_init(ops.ConvSpec(channels, channels, (3, 3)), rng)
    layers["theta_s.shrink"] = ops.xavier_init(ops.ConvSpec(channels, channels, (1, 1)), rng)
    if rolling:
        for i, spec in enumerate(early):
            dspec = ops.ConvSpec(spec.in_channels, spec.out_channels, spec.kernel, dilation=dilation_rate)
            layers[f"theta_l_D.{i}"] = ops.xavier_init(dspec, rng)
        for i, spec in enumerate(middle):
            dspec = ops.ConvSpec(spec.in_channels, spec.out_channels, spec.kernel, dilation=dilation_rate)
            layers[f"theta_m_D.{i}"] = ops.xavier_init(dspec, rng)
    for s in sorted(set(scales)):
        layers[f"theta_up.x{s}"] = ops.bicubic_deconv_init(s, in_channels=channels)
    return PrnModel(
        layers, thresholds, tuple(sorted(set(scales))), dilation_rate, rolling,
        depth_l, depth_m, SLOPE, prior_norm, input_offset,
    )


def path_stages(model: PrnModel, tag: Difficulty, scale: int) -> list[str]:
    """Ordered stage labels read by the forward pass for ``tag``."""
    up = f"theta_up[{scale}]"
    if tag is Difficulty.SEVERE:
        return ["theta_l", "theta_m", "theta_s", up]
    early, middle = ("theta_l_D", "theta_m_D") if model.rolling else ("theta_l", "theta_m")
    if tag is Difficulty.MODERATE:
        return [early, middle, up]
    return [early, up]


def path_layers(model: PrnModel, tag: Difficulty, scale: int) -> list[str]:
    if scale not in model.scales:
        raise ValueError(f"scale {scale} not in model scales {model.scales}")
    names = []
    for stage in path_stages(model, tag, scale):
        if stage.startswith("theta_up"):
            names.append(f"theta_up.x{scale}")
        else:
            names.extend(model.stage_layers(stage))
    return names


def layer_macs(params: ops.LayerParams, h: int, w: int) -> int:
    """Multiply-accumulates of one layer applied to an ``h x w`` input."""
    spec = params.spec
    kh, kw = spec.kernel
    return spec.in_channels * spec.out_channels * kh * kw * h * w


def count_flops(model: PrnModel, path, h: int, w: int, scale: int) -> int:
    """Closed-form MAC count of a path on an ``h x w`` low-res patch.

    ``path`` is a :class:`Difficulty`, a :class:`RouteTrace`, or an explicit
    list of layer names. Convolutions cost ``kh*kw*cin*cout*h*w``; the
    transposed convolution costs the same per low-res input pixel.
    """
    if h < 1 or w < 1:
        raise ValueError(f"patch must be non-empty, got {h}x{w}")
    if isinstance(path, RouteTrace):
        path = path.tag
    names = path_layers(model, path, scale) if isinstance(path, Difficulty) else list(path)
    return sum(layer_macs(model.layers[name], h, w) for name in names)


def _check_patch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None, None]
    if x.ndim != 4 or x.shape[1] != 1:
        raise ops.DimensionError(f"expected a single-channel (N, 1, h, w) patch, got {x.shape}")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ops.DimensionError("patch must be non-empty")
    return x


def forward(model: PrnModel, x: np.ndarray, tag: Difficulty, scale: int, touched: set | None = None, counter: list | None = None) -> np.ndarray:
    """Run the routed path for ``tag``.

    ``touched`` collects the stage labels whose parameters were read and
    ``counter[0]`` accumulates MACs measured from the actual operand shapes.
    """
    x = _check_patch(x)
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.dtype(np.float32)
    h = x.astype(dtype, copy=False) - dtype.type(model.input_offset)
    for name in path_layers(model, tag, scale):
        params = model.layers[name]
        if touched is not None:
            touched.add(stage_of(name))
        if counter is not None:
            spec = params.spec
            counter[0] += h.shape[0] * h.shape[1] * spec.out_channels * spec.kernel[0] * spec.kernel[1] * h.shape[2] * h.shape[3]
        if name.startswith("theta_up"):
            h = ops.deconv2d_forward(h, params, scale)
        else:
            h = ops.leaky_relu(ops.conv2d_forward(h, params), model.slope)
    return h + dtype.type(model.input_offset)


def forward_mild(patch_lr, model: PrnModel, scale: int, touched=None, counter=None):
    return forward(model, patch_lr, Difficulty.MILD, scale, touched, counter)


def forward_moderate(patch_lr, model: PrnModel, scale: int, touched=None, counter=None):
    return forward(model, patch_lr, Difficulty.MODERATE, scale, touched, counter)


def forward_severe(patch_lr, model: PrnModel, scale: int, touched=None, counter=None):
    return forward(model, patch_lr, Difficulty.SEVERE, scale, touched, counter)


def forward_train(model: PrnModel, x: np.ndarray, tag: Difficulty, scale: int):
    """Forward pass keeping what :func:`backward_train` needs."""
    x = _check_patch(x)
    h = x - x.dtype.type(model.input_offset)
    cache = []
    for name in path_layers(model, tag, scale):
        params = model.layers[name]
        if name.startswith("theta_up"):
            cache.append((name, h, None, None))
            h = ops.deconv2d_forward(h, params, scale)
        else:
            cols = ops._im2col(h, params.spec)
            pre = ops.conv2d_forward(h, params, cols=cols)
            cache.append((name, h, cols, pre))
            h = ops.leaky_relu(pre, model.slope)
    return h + h.dtype.type(model.input_offset), cache


def backward_train(model: PrnModel, cache, grad_out: np.ndarray, scale: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Back-propagate ``grad_out`` through a cached path.

    Returns ``{layer_name: (grad_weights, grad_bias)}`` for exactly the layers
    on the path.
    """
    grads = {}
    g = grad_out
    for i in range(len(cache) - 1, -1, -1):
        name, inp, cols, pre = cache[i]
        params = model.layers[name]
        need_x = i > 0
        if name.startswith("theta_up"):
            g, gw, gb = ops.deconv2d_backward(inp, params, scale, g, need_input_grad=need_x)
        else:
            g = ops.leaky_relu_backward(pre, g, model.slope)
            g, gw, gb = ops.conv2d_backward(inp, params, g, cols=cols, need_input_grad=need_x)
        grads[name] = (gw, gb)
    return grads


def route_patch(model: PrnModel, patch_lr: np.ndarray, scale: int, tag: Difficulty | None = None):
    """Classify (unless ``tag`` is given) and super-resolve one patch."""
    prior = gradient_prior(patch_lr, prior_norm=model.prior_norm)
    if tag is None:
        tag = model.tag(prior)
    touched: set = set()
    counter = [0]
    t0 = time.perf_counter()
    out = forward(model, np.asarray(patch_lr, dtype=np.float32), tag, scale, touched, counter)
    elapsed = time.perf_counter() - t0
    return out, RouteTrace(tag, prior, tag.label, counter[0], elapsed, frozenset(touched))


def super_resolve_plane(model: PrnModel, plane_lr: np.ndarray, scale: int, force_tag: Difficulty | None = None):
    """Patchwise routed super-resolution of a luminance plane.

    Returns ``(plane_sr, traces, reassembly_seconds)``. ``force_tag`` bypasses
    classification and sends every patch down one path.
    """
    if scale not in model.scales:
        raise ValueError(f"scale {scale} not in model scales {model.scales}")
    lr_patch = model.patch_size(scale) // scale
    grid, patches = crop_patches(np.asarray(plane_lr, dtype=np.float32), lr_patch)
    outs, traces = [], []
    for patch in patches:
        out, trace = route_patch(model, patch, scale, force_tag)
        outs.append(out)
        traces.append(trace)
    t0 = time.perf_counter()
    plane_sr = reassemble(grid, outs, scale)
    return plane_sr.astype(np.float64), traces, time.perf_counter() - t0


def super_resolve_image(image: ColorImage, model: PrnModel, scale: int):
    """Routed SR on luminance; chrominance is bicubic-upscaled.

    Returns ``(ColorImage, traces)`` in the input image's colour space.
    """
    ycc = rgb_to_ycbcr(image) if image.space is ColorSpace.RGB else image
    y_sr, traces, _ = super_resolve_plane(model, ycc.plane(0), scale)
    h, w = y_sr.shape
    cb = bicubic_resize(ycc.plane(1), w, h)
    cr = bicubic_resize(ycc.plane(2), w, h)
    out = ColorImage.from_planes([y_sr, cb, cr], ColorSpace.YCBCR)
    if image.space is ColorSpace.RGB:
        out = ycbcr_to_rgb(out)
    return out, traces
