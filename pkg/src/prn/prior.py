"""Vertical-gradient difficulty prior and the mild/moderate/severe partition."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Difficulty",
    "Thresholds",
    "DEFAULT_THRESHOLDS",
    "gradient_prior",
    "classify",
    "classify_patch",
    "PriorHistogram",
    "prior_histogram",
]

PRIOR_NORMS = ("l1_mean", "l2_mean")


class Difficulty(enum.IntEnum):
    """Ordered so that ``MILD < MODERATE < SEVERE``."""

    MILD = 0
    MODERATE = 1
    SEVERE = 2

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Thresholds:
    """Prior cut points in 8-bit gradient units.

    The naming follows the original formulation: ``gamma_upper`` bounds the
    mild class and is the *smaller* value.
    """

    gamma_upper: float = 10.0
    gamma_low: float = 30.0

    def __post_init__(self):
        if not 0 <= self.gamma_upper <= self.gamma_low:
            raise ValueError(
                f"need 0 <= gamma_upper <= gamma_low, got ({self.gamma_upper}, {self.gamma_low})"
            )

    @classmethod
    def all_mild(cls) -> "Thresholds":
        return cls(math.inf, math.inf)

    @classmethod
    def all_severe(cls) -> "Thresholds":
        return cls(0.0, 0.0)


DEFAULT_THRESHOLDS = Thresholds(10.0, 30.0)


def gradient_prior(patch, prior_norm: str = "l1_mean", use_both_axes: bool = False) -> float:
    """Mean absolute forward vertical difference of a [0, 1] patch, in 8-bit units.

    Using the mean keeps the value independent of the patch area, so one pair
    of thresholds serves every scale's patch size. ``l2_mean`` returns the RMS
    difference instead.
    """
    x = np.asarray(patch, dtype=np.float64)
    x = x.reshape(x.shape[-2:])
    if x.shape[0] < 2:
        raise ValueError(f"patch needs at least 2 rows, got {x.shape[0]}")
    if prior_norm not in PRIOR_NORMS:
        raise ValueError(f"unknown prior_norm {prior_norm!r}; expected one of {PRIOR_NORMS}")
    diffs = [np.diff(x, axis=0)]
    if use_both_axes:
        if x.shape[1] < 2:
            raise ValueError("horizontal gradient needs at least 2 columns")
        diffs.append(np.diff(x, axis=1))
    values = []
    for d in diffs:
        if prior_norm == "l1_mean":
            values.append(np.abs(d).mean())
        else:
            values.append(math.sqrt(np.square(d).mean()))
    return float(np.mean(values) * 255.0)


def classify(prior: float, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> Difficulty:
    """Left-inclusive partition: mild ``P <= g_up``, moderate ``g_up < P <= g_low``, else severe."""
    if prior <= thresholds.gamma_upper:
        return Difficulty.MILD
    if prior <= thresholds.gamma_low:
        return Difficulty.MODERATE
    return Difficulty.SEVERE


def classify_patch(patch, thresholds: Thresholds = DEFAULT_THRESHOLDS, **prior_kwargs) -> tuple[float, Difficulty]:
    p = gradient_prior(patch, **prior_kwargs)
    return p, classify(p, thresholds)


@dataclass
class PriorHistogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_csv(self) -> str:
        lines = ["bin_low,bin_high,count"]
        for lo, hi, n in zip(self.edges[:-1], self.edges[1:], self.counts):
            lines.append(f"{lo:.6g},{hi:.6g},{int(n)}")
        return "\n".join(lines) + "\n"

    def modes(self) -> list[int]:
        """Indices of local maxima among non-empty bins."""
        c = self.counts
        peaks = []
        for i in range(len(c)):
            left = c[i - 1] if i > 0 else -1
            right = c[i + 1] if i + 1 < len(c) else -1
            if c[i] > 0 and c[i] > left and c[i] >= right:
                peaks.append(i)
        return peaks


def prior_histogram(patches, bin_width: float = 2.0, priors=None, **prior_kwargs) -> PriorHistogram:
    """Histogram of gradient priors with fixed-width bins starting at 0.

    Pass ``priors`` to bin precomputed values instead of recomputing them.
    """
    if priors is None:
        priors = [gradient_prior(p, **prior_kwargs) for p in patches]
    priors = np.asarray(list(priors), dtype=np.float64)
    if priors.size == 0:
        raise ValueError("prior_histogram needs at least one patch")
    nbins = max(1, int(math.floor(priors.max() / bin_width)) + 1)
    edges = np.arange(nbins + 1) * bin_width
    idx = np.minimum((priors // bin_width).astype(int), nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    return PriorHistogram(edges, counts)
