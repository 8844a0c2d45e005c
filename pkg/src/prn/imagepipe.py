"""Colour conversion, bicubic resampling and the patch cropper/reassembler.

Luminance planes are plain 2-D float arrays with values in [0, 1]; patches
handed to the network are (1, 1, h, w) tensors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .imageio import read_pixels, write_pixels
from .tensorops import cubic_weight

__all__ = [
    "ColorSpace",
    "ColorImage",
    "PatchGrid",
    "load_image",
    "save_image",
    "save_plane",
    "rgb_to_ycbcr",
    "ycbcr_to_rgb",
    "bicubic_resize",
    "crop_patches",
    "reassemble",
    "patch_size_for_scale",
    "modcrop",
]

DEFAULT_PATCH_SIZE = 54


class ColorSpace(enum.Enum):
    RGB = "RGB"
    YCBCR = "YCbCr"


@dataclass
class ColorImage:
    """(H, W, 3) float image in [0, 1] tagged with its colour space."""

    data: np.ndarray
    space: ColorSpace = ColorSpace.RGB

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"ColorImage needs shape (H, W, 3), got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_uint8(cls, pixels: np.ndarray, space: ColorSpace = ColorSpace.RGB) -> "ColorImage":
        pixels = np.asarray(pixels)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.shape[2] == 1:
            pixels = np.repeat(pixels, 3, axis=2)
        return cls(pixels.astype(np.float64) / 255.0, space)

    @classmethod
    def from_planes(cls, planes, space: ColorSpace) -> "ColorImage":
        return cls(np.stack(planes, axis=2), space)

    def to_uint8(self) -> np.ndarray:
        return np.round(np.clip(self.data, 0.0, 1.0) * 255.0).astype(np.uint8)

    def plane(self, index: int) -> np.ndarray:
        return self.data[:, :, index].copy()


def load_image(path) -> ColorImage:
    """Read an 8-bit PNG/PGM/PPM as an RGB image (greyscale is replicated)."""
    return ColorImage.from_uint8(read_pixels(path))


def save_image(image: ColorImage, path) -> None:
    if image.space is not ColorSpace.RGB:
        image = ycbcr_to_rgb(image)
    write_pixels(image.to_uint8(), path)


def save_plane(plane: np.ndarray, path) -> None:
    """Write a luminance plane, clamped to [0, 1], as an 8-bit greyscale image."""
    pixels = np.round(np.clip(plane, 0.0, 1.0) * 255.0).astype(np.uint8)
    if str(path).lower().endswith(".ppm"):
        pixels = np.repeat(pixels[:, :, None], 3, axis=2)
    write_pixels(pixels, path)


# ITU-R BT.601 studio swing, inputs and outputs scaled to [0, 1]
_RGB2YCC = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
) / 255.0
_YCC_OFFSET = np.array([16.0, 128.0, 128.0]) / 255.0
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def rgb_to_ycbcr(image: ColorImage) -> ColorImage:
    if image.space is not ColorSpace.RGB:
        raise ValueError(f"expected an RGB image, got {image.space.value}")
    return ColorImage(image.data @ _RGB2YCC.T + _YCC_OFFSET, ColorSpace.YCBCR)


def ycbcr_to_rgb(image: ColorImage) -> ColorImage:
    if image.space is not ColorSpace.YCBCR:
        raise ValueError(f"expected a YCbCr image, got {image.space.value}")
    return ColorImage((image.data - _YCC_OFFSET) @ _YCC2RGB.T, ColorSpace.RGB)


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) bicubic interpolation matrix with edge clamping.

    Downscaling widens the kernel by the scale factor (antialiasing), the
    convention used to synthesise low-res inputs in the SR literature.
    """
    scale = n_out / n_in
    kscale = min(scale, 1.0)
    support = 2.0 / kscale
    centres = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(centres - support).astype(int) + 1
    ntaps = int(math.ceil(2 * support)) + 1
    idx = left[:, None] + np.arange(ntaps)[None, :]
    weights = kscale * cubic_weight(kscale * (centres[:, None] - idx))
    weights /= weights.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), ntaps)
    np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1).ravel()), weights.ravel())
    return mat


def bicubic_resize(plane: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Catmull-Rom (a = -0.5) resampling of a 2-D plane to ``out_h x out_w``."""
    plane = np.asarray(plane, dtype=np.float64)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    h, w = plane.shape
    if (h, w) == (out_h, out_w):
        return plane.copy()
    return _resize_matrix(h, out_h) @ plane @ _resize_matrix(w, out_w).T


def modcrop(plane: np.ndarray, scale: int) -> np.ndarray:
    """Trim trailing rows/cols so both dimensions divide by ``scale``."""
    h, w = plane.shape[:2]
    return plane[: h - h % scale, : w - w % scale]


def patch_size_for_scale(scale: int, base: int = DEFAULT_PATCH_SIZE) -> int:
    """High-res patch size: ``base`` when divisible by the scale, else the next multiple."""
    return base if base % scale == 0 else base + (-base) % scale


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping tiling of a reflect-padded plane."""

    patch_size: int
    height: int
    width: int
    pad_bottom: int
    pad_right: int
    origins: tuple[tuple[int, int], ...]

    @property
    def rows(self) -> int:
        return (self.height + self.pad_bottom) // self.patch_size

    @property
    def cols(self) -> int:
        return (self.width + self.pad_right) // self.patch_size

    def __len__(self) -> int:
        return len(self.origins)


def crop_patches(plane: np.ndarray, patch_size: int = DEFAULT_PATCH_SIZE):
    """Tile ``plane`` into ``patch_size`` squares after reflect-padding bottom/right.

    Returns ``(grid, patches)`` with patches as (1, 1, p, p) arrays in
    row-major grid order.
    """
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.size == 0:
        raise ValueError(f"expected a non-empty 2-D plane, got shape {plane.shape}")
    if patch_size < 1:
        raise ValueError("patch_size must be positive")
    h, w = plane.shape
    pad_b = (-h) % patch_size
    pad_r = (-w) % patch_size
    padded = np.pad(plane, ((0, pad_b), (0, pad_r)), mode="reflect") if pad_b or pad_r else plane
    origins = tuple(
        (r, c) for r in range(0, h + pad_b, patch_size) for c in range(0, w + pad_r, patch_size)
    )
    patches = [
        padded[r : r + patch_size, c : c + patch_size][None, None].copy() for r, c in origins
    ]
    return PatchGrid(patch_size, h, w, pad_b, pad_r, origins), patches


def reassemble(grid: PatchGrid, patches, scale: int = 1) -> np.ndarray:
    """Inverse of :func:`crop_patches` for patches upscaled by ``scale``."""
    if len(patches) != len(grid.origins):
        raise ValueError(f"expected {len(grid.origins)} patches, got {len(patches)}")
    p = grid.patch_size * scale
    first = np.asarray(patches[0]) if patches else np.zeros((1, 1, p, p))
    canvas = np.empty(((grid.height + grid.pad_bottom) * scale, (grid.width + grid.pad_right) * scale), dtype=first.dtype)
    for (r, c), patch in zip(grid.origins, patches):
        patch = np.asarray(patch)
        tile = patch.reshape(patch.shape[-2:]) if patch.ndim > 2 else patch
        if tile.shape != (p, p) or patch.size != p * p:
            raise ValueError(f"patch shape {patch.shape} does not match {p}x{p}")
        canvas[r * scale : r * scale + p, c * scale : c * scale + p] = tile
    return canvas[: grid.height * scale, : grid.width * scale]
