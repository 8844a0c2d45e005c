"""Quality metrics, dataset evaluation, timing and ablation harnesses.

All metrics are computed on the luminance plane in [0, 1]. PSNR shaves
``scale`` pixels from every border. Reports are plain dataclasses that render
to CSV and to a Markdown table.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagepipe import bicubic_resize, crop_patches, load_image, modcrop, patch_size_for_scale
from .prior import DEFAULT_THRESHOLDS, Difficulty, PriorHistogram, Thresholds, gradient_prior
from .prnet import PrnModel, RouteTrace, build_model, count_flops, path_stages, super_resolve_plane
from .training import TrainConfig, TrainResult, luminance, make_training_pairs, train

__all__ = [
    "PSNR_CAP",
    "psnr",
    "ssim",
    "load_dataset",
    "ImageResult",
    "EvalReport",
    "evaluate_dataset",
    "GainAnalysis",
    "gain_analysis",
    "Recipe",
    "THRESHOLD_GRID_L",
    "THRESHOLD_GRID_U",
    "threshold_grid",
    "SweepReport",
    "ablate_thresholds",
    "ablate_rolling",
    "ablate_stage_depth",
    "TimingReport",
    "timing_report",
]

PSNR_CAP = 100.0
IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")

THRESHOLD_GRID_L = (10.0, 20.0, 50.0, 70.0)
THRESHOLD_GRID_U = (30.0, 50.0, 80.0, 100.0)

ROLLING_REFERENCE = {"rolling_off_psnr": 27.03, "rolling_on_psnr": 27.12, "delta_db": 0.09, "desk_reproducible": False}

# (depth_l, depth_m) -> (psnr dB, seconds per image) as published for x3
DEPTH_REFERENCE = {
    (1, 2): (27.12, 1.81),
    (2, 2): (27.13, 1.91),
    (3, 2): (27.15, 2.21),
    (1, 1): (27.05, 1.48),
    (1, 3): (27.15, 1.99),
}
DEPTH_GRID = ((1, 2), (2, 2), (3, 2), (1, 1), (1, 3))


# metrics


def _pair(pred, ref) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"expected 2-D planes, got shape {a.shape}")
    return a, b


def psnr(pred, ref, shave: int = 0) -> float:
    """``10 log10(1 / MSE)`` for planes in [0, 1], capped at 100 dB."""
    a, b = _pair(pred, ref)
    if shave < 0:
        raise ValueError("shave must be >= 0")
    if shave:
        a, b = a[shave:-shave, shave:-shave], b[shave:-shave, shave:-shave]
        if a.size == 0:
            raise ValueError("shave removes the whole image")
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gaussian(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(pred, ref, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained Gaussian windows."""
    a, b = _pair(pred, ref)
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} window")
    g = _gaussian(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# datasets


def load_dataset(source) -> list[tuple[str, np.ndarray]]:
    """``(name, luminance)`` pairs from a directory, or from in-memory images.

    Directory entries are read in filename order. In-memory sources may be a
    list of planes / ColorImages or a ``{name: image}`` mapping.
    """
    if isinstance(source, (str, Path)):
        root = Path(source)
        if not root.is_dir():
            raise FileNotFoundError(f"{root} is not a directory")
        files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        items = [(p.name, luminance(load_image(p))) for p in files]
    elif isinstance(source, dict):
        items = [(str(k), luminance(v)) for k, v in sorted(source.items())]
    else:
        items = [(f"img{i:03d}", luminance(v)) for i, v in enumerate(source)]
    if not items:
        raise ValueError("dataset is empty")
    return items


def _degrade(hr: np.ndarray, scale: int):
    hr = modcrop(hr, scale)
    h, w = hr.shape
    lr = bicubic_resize(hr, w // scale, h // scale)
    return hr, lr


# evaluation


@dataclass
class ImageResult:
    name: str
    psnr: float
    ssim: float
    bicubic_psnr: float
    bicubic_ssim: float
    tag_counts: dict
    macs: int
    wall_time: float
    reassembly_time: float


def _csv(fields, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    writer.writerows(rows)
    return buf.getvalue()


def _markdown(fields, rows) -> str:
    lines = ["| " + " | ".join(fields) + " |", "|" + "---|" * len(fields)]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(v) for v in row) + " |")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}" if abs(v) < 1 else f"{v:.2f}"
    return str(v)


@dataclass
class EvalReport:
    rows: list[ImageResult]
    scale: int
    config: dict = field(default_factory=dict)

    def _mean(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.rows]))

    @property
    def mean_psnr(self) -> float:
        return self._mean("psnr")

    @property
    def mean_ssim(self) -> float:
        return self._mean("ssim")

    @property
    def mean_bicubic_psnr(self) -> float:
        return self._mean("bicubic_psnr")

    @property
    def mean_bicubic_ssim(self) -> float:
        return self._mean("bicubic_ssim")

    @property
    def mean_macs(self) -> float:
        return self._mean("macs")

    @property
    def mean_time(self) -> float:
        return self._mean("wall_time")

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def tag_counts(self) -> dict:
        out = {t.label: 0 for t in Difficulty}
        for r in self.rows:
            for k, v in r.tag_counts.items():
                out[k] += v
        return out

    def to_csv(self, timing: bool = True) -> str:
        """Per-image rows. ``timing=False`` drops the wall-clock columns so that
        reports of repeated runs compare byte for byte."""
        fields = ["image", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim", "n_mild", "n_moderate", "n_severe", "macs"]
        if timing:
            fields += ["wall_time_s", "reassembly_s"]
        rows = []
        for r in self.rows:
            row = [r.name, repr(r.psnr), repr(r.ssim), repr(r.bicubic_psnr), repr(r.bicubic_ssim)]
            row += [r.tag_counts[t.label] for t in Difficulty] + [r.macs]
            if timing:
                row += [repr(r.wall_time), repr(r.reassembly_time)]
            rows.append(row)
        return _csv(fields, rows)

    def to_markdown(self) -> str:
        s = self.scale
        fields = ["Method", "Scale", "PSNR", "SSIM", "MACs/image", "s/image"]
        rows = [
            ["Bicubic", f"x{s}", self.mean_bicubic_psnr, self.mean_bicubic_ssim, "-", "-"],
            ["PRN", f"x{s}", self.mean_psnr, self.mean_ssim, f"{self.mean_macs:.4g}", self.mean_time],
        ]
        counts = self.tag_counts
        tail = f"\nPatches: {counts['mild']} mild, {counts['moderate']} moderate, {counts['severe']} severe.\n"
        return _markdown(fields, rows) + tail


SRFunction = Callable[[np.ndarray, int], np.ndarray]


def evaluate_dataset(model: PrnModel, dataset, scale: int, force_tag: Difficulty | None = None) -> EvalReport:
    """Degrade each HR image by bicubic downscaling, super-resolve, and score on Y.

    SR output is clipped to [0, 1] before scoring, as it would be when saved.
    """
    items = load_dataset(dataset)
    rows = []
    for name, hr in items:
        hr, lr = _degrade(hr, scale)
        h, w = hr.shape
        t0 = time.perf_counter()
        sr, traces, reassembly = super_resolve_plane(model, lr, scale, force_tag)
        elapsed = time.perf_counter() - t0
        sr = np.clip(sr, 0.0, 1.0)
        bic = np.clip(bicubic_resize(lr, w, h), 0.0, 1.0)
        counts = {t.label: 0 for t in Difficulty}
        for tr in traces:
            counts[tr.tag.label] += 1
        rows.append(
            ImageResult(
                name,
                psnr(sr, hr, scale),
                ssim(sr, hr),
                psnr(bic, hr, scale),
                ssim(bic, hr),
                counts,
                sum(tr.macs for tr in traces),
                elapsed,
                reassembly,
            )
        )
    config = {
        "scale": scale,
        "gamma_upper": model.thresholds.gamma_upper,
        "gamma_low": model.thresholds.gamma_low,
        "rolling": model.rolling,
        "depth_l": model.depth_l,
        "depth_m": model.depth_m,
        "dilation_rate": model.dilation_rate,
    }
    return EvalReport(rows, scale, config)


# gain analysis


@dataclass
class PatchGain:
    image: str
    index: int
    prior: float
    sr_psnr: float
    bicubic_psnr: float

    @property
    def gain(self) -> float:
        return self.sr_psnr - self.bicubic_psnr


@dataclass
class GainAnalysis:
    threshold: float
    successful: list[PatchGain]
    failure: list[PatchGain]

    @staticmethod
    def _stats(patches) -> dict:
        priors = [p.prior for p in patches]
        if not priors:
            return {"count": 0, "mean_prior": float("nan"), "median_prior": float("nan")}
        return {"count": len(priors), "mean_prior": float(np.mean(priors)), "median_prior": float(np.median(priors))}

    @property
    def successful_stats(self) -> dict:
        return self._stats(self.successful)

    @property
    def failure_stats(self) -> dict:
        return self._stats(self.failure)

    def histograms(self, bin_width: float = 2.0):
        """Prior histograms ``(successful, failure)`` on a shared bin grid."""
        top = max((p.prior for p in self.successful + self.failure), default=0.0)
        nbins = int(top // bin_width) + 1
        edges = np.arange(nbins + 1) * bin_width
        out = []
        for group in (self.successful, self.failure):
            idx = np.array([int(p.prior // bin_width) for p in group], dtype=int)
            out.append(PriorHistogram(edges, np.bincount(idx, minlength=nbins)))
        return tuple(out)

    def to_csv(self) -> str:
        rows = []
        for split, group in (("successful", self.successful), ("failure", self.failure)):
            for p in group:
                rows.append([p.image, p.index, split, repr(p.prior), repr(p.sr_psnr), repr(p.bicubic_psnr), repr(p.gain)])
        return _csv(["image", "patch", "split", "prior", "sr_psnr", "bicubic_psnr", "gain_db"], rows)


def gain_analysis(sr, dataset, scale: int, gain_threshold: float = 1.0, patch_size: int | None = None) -> GainAnalysis:
    """Split HR patches by PSNR gain of ``sr`` over bicubic.

    ``sr`` is a PrnModel or any callable ``(lr_plane, scale) -> hr_plane``.
    Patches with gain >= ``gain_threshold`` dB are successful. Each patch
    carries the gradient prior of its LR counterpart. Partial border patches
    are skipped.
    """
    if isinstance(sr, PrnModel):
        model = sr
        sr_fn = lambda plane, s: super_resolve_plane(model, plane, s)[0]  # noqa: E731
        patch_size = patch_size or model.patch_size(scale)
    else:
        sr_fn = sr
        patch_size = patch_size or patch_size_for_scale(scale)
    lr_size = patch_size // scale
    successful, failure = [], []
    for name, hr in load_dataset(dataset):
        hr, lr = _degrade(hr, scale)
        h, w = hr.shape
        out = np.clip(sr_fn(lr, scale), 0.0, 1.0)
        bic = np.clip(bicubic_resize(lr, w, h), 0.0, 1.0)
        grid, _ = crop_patches(hr, patch_size)
        for i, (r, c) in enumerate(grid.origins):
            if r + patch_size > h or c + patch_size > w:
                continue
            win = np.s_[r : r + patch_size, c : c + patch_size]
            lr_win = lr[r // scale : r // scale + lr_size, c // scale : c // scale + lr_size]
            p = PatchGain(name, i, gradient_prior(lr_win), psnr(out[win], hr[win]), psnr(bic[win], hr[win]))
            (successful if p.gain >= gain_threshold else failure).append(p)
    return GainAnalysis(gain_threshold, successful, failure)


# ablations


@dataclass
class Recipe:
    """How to train one model for an ablation point."""

    train_images: list
    scale: int = 3
    config: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=16, lr=1e-3, lr_decay_every=200, epochs=300))
    model_seed: int = 0
    channels: int = 64

    def train(self, thresholds: Thresholds | None = None, **model_kwargs) -> tuple[PrnModel, TrainResult]:
        thresholds = thresholds or self.config.thresholds
        cfg = replace(self.config, thresholds=thresholds, scales=(self.scale,))
        model = build_model(scales=(self.scale,), thresholds=thresholds, seed=self.model_seed, channels=self.channels, **model_kwargs)
        pairs = make_training_pairs(self.train_images, (self.scale,), thresholds, seed=cfg.seed, prior_norm=model.prior_norm)
        result = train(model, pairs, cfg)
        return result.model, result


def threshold_grid(lows=THRESHOLD_GRID_L, ups=THRESHOLD_GRID_U) -> list[tuple[str, Thresholds]]:
    """Valid ``(label, Thresholds)`` points, sorted by gamma_upper then gamma_low.

    Labels are ``L{i}U{j}`` (1-based grid positions); pairs with
    gamma_upper > gamma_low are skipped.
    """
    points = []
    for i, lo in enumerate(lows, 1):
        for j, up in enumerate(ups, 1):
            if lo <= up:
                points.append((lo, up, f"L{i}U{j}"))
    points.sort()
    return [(label, Thresholds(lo, up)) for lo, up, label in points]


@dataclass
class SweepReport:
    """One row per configuration; ``reference`` holds published numbers for comparison."""

    fields: list[str]
    rows: list[list]
    reference: dict = field(default_factory=dict)
    reports: list[EvalReport] = field(default_factory=list)

    def column(self, name: str) -> list:
        i = self.fields.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self) -> str:
        return _csv(self.fields, [[repr(v) if isinstance(v, float) else v for v in r] for r in self.rows])

    def to_markdown(self) -> str:
        text = _markdown(self.fields, self.rows)
        if self.reference:
            text += "\nReference: " + ", ".join(f"{k}={v}" for k, v in self.reference.items()) + "\n"
        return text


def _model_for(model_or_recipe, thresholds=None, **model_kwargs) -> PrnModel:
    if isinstance(model_or_recipe, PrnModel):
        if model_kwargs:
            raise ValueError("architecture changes need a Recipe, not a trained model")
        return model_or_recipe.with_thresholds(thresholds) if thresholds else model_or_recipe
    return model_or_recipe.train(thresholds, **model_kwargs)[0]


def ablate_thresholds(model_or_recipe, dataset, scale: int, grid=None, retrain: bool = False) -> SweepReport:
    """PSNR / MACs / time trade-off over a threshold grid.

    A trained model (or a recipe trained once at the default thresholds) is
    re-evaluated with each threshold pair. With ``retrain`` and a recipe, a
    fresh model is trained per grid point instead.
    """
    grid = threshold_grid() if grid is None else list(grid)
    if not grid:
        raise ValueError("empty threshold grid")
    if retrain and isinstance(model_or_recipe, PrnModel):
        raise ValueError("retrain needs a Recipe")
    base = None if retrain else _model_for(model_or_recipe)
    fields = ["label", "gamma_upper", "gamma_low", "default", "psnr", "ssim", "mean_macs", "mean_time_s", "n_mild", "n_moderate", "n_severe"]
    rows, reports = [], []
    for label, th in grid:
        model = _model_for(model_or_recipe, th) if retrain else base.with_thresholds(th)
        rep = evaluate_dataset(model, dataset, scale)
        c = rep.tag_counts
        is_default = th == DEFAULT_THRESHOLDS
        rows.append([label, th.gamma_upper, th.gamma_low, is_default, rep.mean_psnr, rep.mean_ssim,
                     rep.mean_macs, rep.mean_time, c["mild"], c["moderate"], c["severe"]])
        reports.append(rep)
    return SweepReport(fields, rows, {"default": "(10, 30)"}, reports)


def ablate_rolling(recipe: Recipe, dataset, scale: int | None = None) -> SweepReport:
    """Train twin models with the rolling strategy off and on."""
    scale = scale or recipe.scale
    fields = ["rolling", "psnr", "ssim", "bicubic_psnr", "mean_macs", "mean_time_s", "stages_mild", "stages_moderate", "stages_severe"]
    rows, reports = [], []
    for rolling in (False, True):
        model = recipe.train(rolling=rolling)[0]
        rep = evaluate_dataset(model, dataset, scale)
        stages = ["+".join(path_stages(model, t, scale)) for t in Difficulty]
        rows.append([rolling, rep.mean_psnr, rep.mean_ssim, rep.mean_bicubic_psnr, rep.mean_macs, rep.mean_time, *stages])
        reports.append(rep)
    return SweepReport(fields, rows, dict(ROLLING_REFERENCE), reports)


def ablate_stage_depth(recipe: Recipe, dataset, scale: int | None = None, grid=DEPTH_GRID) -> SweepReport:
    """Vary the early (theta_l) and middle (theta_m) stage depths."""
    scale = scale or recipe.scale
    fields = ["depth_l", "depth_m", "params", "severe_macs_per_patch", "psnr", "ssim", "mean_macs", "mean_time_s", "ref_psnr", "ref_time_s"]
    rows, reports = [], []
    for depth_l, depth_m in grid:
        if depth_l < 1 or depth_m < 1:
            raise ValueError("stage depths must be >= 1")
        model = recipe.train(depth_l=depth_l, depth_m=depth_m)[0]
        rep = evaluate_dataset(model, dataset, scale)
        n = model.patch_size(scale) // scale
        params = sum(p.weights.size + p.bias.size for p in model.layers.values())
        ref_psnr, ref_time = DEPTH_REFERENCE.get((depth_l, depth_m), (None, None))
        rows.append([depth_l, depth_m, params, count_flops(model, Difficulty.SEVERE, n, n, scale),
                     rep.mean_psnr, rep.mean_ssim, rep.mean_macs, rep.mean_time, ref_psnr, ref_time])
        reports.append(rep)
    return SweepReport(fields, rows, {"published_rows": "depth (l, m) -> (dB, s) at x3", "desk_reproducible": False}, reports)


# timing


@dataclass
class TimingReport:
    n_images: int
    per_tag: dict
    total_macs: int
    network_time: float
    reassembly_time: float
    image_times: list[float]
    image_macs: list[int]

    @property
    def total_time(self) -> float:
        return self.network_time + self.reassembly_time

    @property
    def mean_time(self) -> float:
        return self.total_time / self.n_images

    @property
    def median_time(self) -> float:
        return statistics.median(self.image_times)

    @property
    def mean_macs(self) -> float:
        return self.total_macs / self.n_images

    @property
    def median_macs(self) -> float:
        return statistics.median(self.image_macs)

    def to_markdown(self) -> str:
        fields = ["tag", "patches", "macs", "time_s"]
        rows = [[k, v["count"], v["macs"], v["time"]] for k, v in self.per_tag.items()]
        rows.append(["reassembly", "-", 0, self.reassembly_time])
        rows.append(["total", sum(v["count"] for v in self.per_tag.values()), self.total_macs, self.total_time])
        text = _markdown(fields, rows)
        text += f"\nPer image: mean {self.mean_time:.4f} s / {self.mean_macs:.4g} MACs, median {self.median_time:.4f} s / {self.median_macs:.4g} MACs.\n"
        return text


def timing_report(traces, reassembly_times=None) -> TimingReport:
    """Summarise route traces.

    ``traces`` is a list of per-image trace lists (a flat list of RouteTrace
    counts as one image). Reassembly time is added to each image's total.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to summarise")
    if isinstance(traces[0], RouteTrace):
        traces = [traces]
    if any(not img for img in traces):
        raise ValueError("an image has no traces")
    reassembly = list(reassembly_times) if reassembly_times is not None else [0.0] * len(traces)
    if len(reassembly) != len(traces):
        raise ValueError("one reassembly time per image is required")
    per_tag = {t.label: {"count": 0, "macs": 0, "time": 0.0} for t in Difficulty}
    image_times, image_macs = [], []
    for img, extra in zip(traces, reassembly):
        for tr in img:
            row = per_tag[tr.tag.label]
            row["count"] += 1
            row["macs"] += tr.macs
            row["time"] += tr.wall_time
        image_times.append(sum(tr.wall_time for tr in img) + extra)
        image_macs.append(sum(tr.macs for tr in img))
    network = sum(v["time"] for v in per_tag.values())
    return TimingReport(len(traces), per_tag, sum(image_macs), network, float(sum(reassembly)), image_times, image_macs)
