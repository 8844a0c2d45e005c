"""Patch-wise rolling network for single-image super-resolution, in numpy."""

from .checkpoint import load_checkpoint, save_checkpoint
from .evalbench import evaluate_dataset, psnr, ssim
from .imagepipe import ColorImage, ColorSpace, bicubic_resize, load_image, save_image
from .prior import DEFAULT_THRESHOLDS, Difficulty, Thresholds, classify, gradient_prior
from .prnet import PrnModel, build_model, count_flops, super_resolve_image, super_resolve_plane
from .training import TrainConfig, make_training_pairs, train

__version__ = "0.1.0"

__all__ = [
    "ColorImage",
    "ColorSpace",
    "DEFAULT_THRESHOLDS",
    "Difficulty",
    "PrnModel",
    "Thresholds",
    "TrainConfig",
    "bicubic_resize",
    "build_model",
    "classify",
    "count_flops",
    "evaluate_dataset",
    "gradient_prior",
    "load_checkpoint",
    "load_image",
    "make_training_pairs",
    "psnr",
    "save_checkpoint",
    "save_image",
    "ssim",
    "super_resolve_image",
    "super_resolve_plane",
    "train",
]
