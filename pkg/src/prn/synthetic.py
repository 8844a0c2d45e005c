"""Procedural luminance images for desk-scale training and efficiency checks."""

from __future__ import annotations

import numpy as np

__all__ = ["texture_image", "flat_image", "texture_corpus", "mixed_corpus", "half_flat_half_noise"]


def _coords(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy, xx


def texture_image(size: int, rng) -> np.ndarray:
    """Sharp-edged shapes, stripes and gratings over a smooth background."""
    rng = np.random.default_rng(rng)
    yy, xx = _coords(size)
    img = 0.5 + 0.15 * np.sin(2 * np.pi * (xx * rng.uniform(-1, 1) + yy * rng.uniform(-1, 1)) / size)
    for _ in range(rng.integers(18, 30)):
        kind = rng.integers(3)
        value = rng.uniform(0.05, 0.95)
        cy, cx = rng.uniform(0, size, 2)
        if kind == 0:
            hh, ww = rng.uniform(size * 0.04, size * 0.25, 2)
            angle = rng.uniform(0, np.pi)
            u = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
            v = -(xx - cx) * np.sin(angle) + (yy - cy) * np.cos(angle)
            mask = (np.abs(u) < ww) & (np.abs(v) < hh)
        elif kind == 1:
            r = rng.uniform(size * 0.03, size * 0.15)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        else:
            r = rng.uniform(size * 0.1, size * 0.3)
            period = rng.uniform(6, 16)
            angle = rng.uniform(0, np.pi)
            phase = (xx * np.cos(angle) + yy * np.sin(angle)) / period
            mask = ((xx - cx) ** 2 + (yy - cy) ** 2 < r * r) & (np.mod(phase, 1.0) < 0.5)
        img[mask] = value
    return np.clip(img, 0.0, 1.0)


def flat_image(size: int, rng) -> np.ndarray:
    """Smooth low-frequency shading with no edges."""
    rng = np.random.default_rng(rng)
    yy, xx = _coords(size)
    a, b = rng.uniform(-0.2, 0.2, 2)
    img = rng.uniform(0.3, 0.7) + a * xx / size + b * np.sin(np.pi * yy / size)
    return np.clip(img, 0.0, 1.0)


def texture_corpus(n: int, size: int, seed=0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [texture_image(size, rng) for _ in range(n)]


def half_flat_half_noise(size: int, rng, amplitude: float = 0.5) -> np.ndarray:
    """Left half constant grey, right half uniform noise."""
    rng = np.random.default_rng(rng)
    img = np.full((size, size), 0.5)
    half = size // 2
    img[:, half:] = np.clip(0.5 + amplitude * (rng.random((size, size - half)) - 0.5), 0, 1)
    return img


def mixed_corpus(n: int, size: int, flat_fraction: float = 0.7, seed=0) -> list[np.ndarray]:
    """Images whose 54px tiles are flat with probability ``flat_fraction``, textured otherwise."""
    rng = np.random.default_rng(seed)
    tile = 54
    out = []
    for _ in range(n):
        img = flat_image(size, rng)
        tex = texture_image(size, rng)
        for r in range(0, size, tile):
            for c in range(0, size, tile):
                if rng.random() >= flat_fraction:
                    img[r : r + tile, c : c + tile] = tex[r : r + tile, c : c + tile]
        out.append(img)
    return out
