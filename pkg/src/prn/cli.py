"""Command line entry point: ``prn <subcommand> ...``.

Every subcommand accepts ``--config FILE``: a JSON object whose keys are flag
names (``batch_size`` or ``batch-size``); its values override the flags.
Results go to ``--out`` as CSV and Markdown.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .evalbench import (
    Recipe,
    ablate_rolling,
    ablate_stage_depth,
    ablate_thresholds,
    evaluate_dataset,
    gain_analysis,
    load_dataset,
    threshold_grid,
    timing_report,
)
from .imagepipe import crop_patches, load_image, patch_size_for_scale, save_image
from .prior import Difficulty, Thresholds, classify, gradient_prior, prior_histogram
from .prnet import build_model, super_resolve_image
from .synthetic import texture_corpus
from .training import TrainConfig, make_training_pairs, train

log = logging.getLogger("prn")


# argument groups


def _add_data(p, prefix="", help_dir="directory of HR images", seed=2):
    p.add_argument(f"--{prefix}data-dir", help=help_dir)
    p.add_argument(f"--{prefix}synthetic", type=int, default=0, metavar="N", help="use N generated texture images instead")
    p.add_argument(f"--{prefix}synthetic-size", type=int, default=162)
    p.add_argument(f"--{prefix}synthetic-seed", type=int, default=seed)


def _add_thresholds(p):
    p.add_argument("--gamma-upper", type=float, default=10.0, help="priors at or below this exit after the early stage")
    p.add_argument("--gamma-low", type=float, default=30.0, help="priors at or below this exit after the middle stage")


def _add_recipe(p):
    _add_data(p, "train-", "directory of HR training images", seed=1)
    _add_thresholds(p)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay-every", type=int, default=200)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=64)


def _common(p):
    p.add_argument("--config", help="JSON file whose values override the flags")
    p.add_argument("--out", default="results", help="results directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prn", description="Patch-wise rolling super-resolution network")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus loss curve")
    _common(p)
    _add_recipe(p)
    p.add_argument("--scales", type=int, nargs="+", default=[3])
    p.add_argument("--no-rolling", action="store_true")
    p.add_argument("--depth-l", type=int, default=1)
    p.add_argument("--depth-m", type=int, default=2)
    p.add_argument("--dilation-rate", type=int, default=2)
    p.add_argument("--checkpoint", default="model.prn", help="output checkpoint path")
    p.add_argument("--curve", help="loss curve CSV path (default OUT/loss_curve.csv)")

    p = sub.add_parser("eval", help="PSNR/SSIM/MACs/time of a checkpoint against bicubic")
    _common(p)
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scale", type=int, default=3)

    p = sub.add_parser("ablate-thresholds", help="PSNR/MACs trade-off over the threshold grid")
    _common(p)
    _add_data(p)
    _add_recipe(p)
    p.add_argument("--checkpoint", help="evaluate this model instead of training one")
    p.add_argument("--retrain", action="store_true", help="train a fresh model per grid point")
    p.add_argument("--scale", type=int, default=3)

    for name, text in (("ablate-rolling", "rolling strategy on vs off"), ("ablate-depth", "early/middle stage depth grid")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _add_data(p)
        _add_recipe(p)
        p.add_argument("--scale", type=int, default=3)

    p = sub.add_parser("gain-analysis", help="split patches by PSNR gain over bicubic")
    _common(p)
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scale", type=int, default=3)
    p.add_argument("--gain-threshold", type=float, default=1.0)
    p.add_argument("--bin-width", type=float, default=2.0)

    p = sub.add_parser("classify-stats", help="per-image tag counts and the prior histogram")
    _common(p)
    _add_data(p, help_dir="directory of LR input images")
    _add_thresholds(p)
    p.add_argument("--scale", type=int, default=3)
    p.add_argument("--bin-width", type=float, default=2.0)

    p = sub.add_parser("upscale", help="super-resolve one image")
    p.add_argument("--config", help="JSON file whose values override the flags")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scale", type=int, default=3)
    p.add_argument("input")
    p.add_argument("output")
    return parser


def apply_config(args: argparse.Namespace, path) -> argparse.Namespace:
    with open(path) as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise SystemExit(f"config {path} must hold a JSON object")
    for key, value in values.items():
        attr = key.replace("-", "_")
        if attr in ("command", "config") or not hasattr(args, attr):
            raise SystemExit(f"config key {key!r} is not a flag of '{args.command}'")
        setattr(args, attr, value)
    return args


# helpers


def _dataset(args, prefix=""):
    data_dir = getattr(args, f"{prefix}data_dir")
    n = getattr(args, f"{prefix}synthetic")
    if data_dir:
        return str(data_dir)
    if n:
        return texture_corpus(n, getattr(args, f"{prefix}synthetic_size"), getattr(args, f"{prefix}synthetic_seed"))
    raise SystemExit(f"give --{prefix.replace('_', '-')}data-dir or --{prefix.replace('_', '-')}synthetic N")


def _thresholds(args) -> Thresholds:
    return Thresholds(args.gamma_upper, args.gamma_low)


def _config(args, scales) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        lr=args.lr,
        lr_decay_every=args.lr_decay_every,
        epochs=args.epochs,
        scales=tuple(scales),
        seed=args.seed,
        optimizer=args.optimizer,
        thresholds=_thresholds(args),
    )


def _recipe(args, scale) -> Recipe:
    images = [img for _, img in load_dataset(_dataset(args, "train_"))]
    return Recipe(images, scale=scale, config=_config(args, (scale,)), model_seed=args.seed, channels=args.channels)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    log.info("wrote %s", path)
    return path


# subcommands


def cmd_train(args):
    scales = tuple(int(s) for s in args.scales)
    images = [img for _, img in load_dataset(_dataset(args, "train_"))]
    th = _thresholds(args)
    model = build_model(
        scales=scales,
        thresholds=th,
        dilation_rate=args.dilation_rate,
        rolling=not args.no_rolling,
        depth_l=args.depth_l,
        depth_m=args.depth_m,
        seed=args.seed,
        channels=args.channels,
    )
    pairs = make_training_pairs(images, scales, th, seed=args.seed, prior_norm=model.prior_norm)
    counts = {t.label: sum(p.tag is t for p in pairs) for t in Difficulty}
    log.info("%d pairs: %s", len(pairs), counts)

    def progress(epoch, row, _model):
        log.info("epoch %d lr %.1e loss %.6f", row["epoch"], row["lr"], row["loss_all"])

    result = train(model, pairs, _config(args, scales), callback=progress)
    save_checkpoint(result.model, args.checkpoint)
    curve = Path(args.curve) if args.curve else Path(args.out) / "loss_curve.csv"
    _write(curve.parent, curve.name, result.curve_csv())
    print(f"checkpoint {args.checkpoint}, {len(pairs)} pairs, final loss {result.curve[-1]['loss_all']:.6f}" if result.curve else f"checkpoint {args.checkpoint}")


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    rep = evaluate_dataset(model, _dataset(args), args.scale)
    out = Path(args.out)
    _write(out, "eval.csv", rep.to_csv())
    _write(out, "eval.md", rep.to_markdown())
    print(rep.to_markdown(), end="")


def cmd_ablate_thresholds(args):
    source = load_checkpoint(args.checkpoint) if args.checkpoint and not args.retrain else _recipe(args, args.scale)
    rep = ablate_thresholds(source, _dataset(args), args.scale, threshold_grid(), retrain=args.retrain)
    _write(Path(args.out), "thresholds.csv", rep.to_csv())
    _write(Path(args.out), "thresholds.md", rep.to_markdown())
    print(rep.to_markdown(), end="")


def cmd_ablate_rolling(args):
    rep = ablate_rolling(_recipe(args, args.scale), _dataset(args), args.scale)
    _write(Path(args.out), "rolling.csv", rep.to_csv())
    _write(Path(args.out), "rolling.md", rep.to_markdown())
    print(rep.to_markdown(), end="")


def cmd_ablate_depth(args):
    rep = ablate_stage_depth(_recipe(args, args.scale), _dataset(args), args.scale)
    _write(Path(args.out), "depth.csv", rep.to_csv())
    _write(Path(args.out), "depth.md", rep.to_markdown())
    print(rep.to_markdown(), end="")


def cmd_gain_analysis(args):
    model = load_checkpoint(args.checkpoint)
    res = gain_analysis(model, _dataset(args), args.scale, args.gain_threshold)
    out = Path(args.out)
    _write(out, "gain.csv", res.to_csv())
    ok, bad = res.histograms(args.bin_width)
    _write(out, "prior_hist_successful.csv", ok.to_csv())
    _write(out, "prior_hist_failure.csv", bad.to_csv())
    for name, stats in (("successful", res.successful_stats), ("failure", res.failure_stats)):
        print(f"{name}: {stats['count']} patches, mean prior {stats['mean_prior']:.3f}, median {stats['median_prior']:.3f}")


def cmd_classify_stats(args):
    th = _thresholds(args)
    lr_patch = patch_size_for_scale(args.scale) // args.scale
    rows, priors = [], []
    for name, plane in load_dataset(_dataset(args)):
        _, patches = crop_patches(plane, lr_patch)
        counts = {t.label: 0 for t in Difficulty}
        for patch in patches:
            prior = gradient_prior(patch)
            priors.append(prior)
            counts[classify(prior, th).label] += 1
        rows.append(f"{name},{counts['mild']},{counts['moderate']},{counts['severe']}")
    out = Path(args.out)
    _write(out, "tag_counts.csv", "image,n_mild,n_moderate,n_severe\n" + "\n".join(rows) + "\n")
    _write(out, "prior_hist.csv", prior_histogram(None, args.bin_width, priors=priors).to_csv())
    print("\n".join(["image,n_mild,n_moderate,n_severe", *rows]))


def cmd_upscale(args):
    model = load_checkpoint(args.checkpoint)
    out, traces = super_resolve_image(load_image(args.input), model, args.scale)
    save_image(out, args.output)
    rep = timing_report(traces)
    counts = {k: v["count"] for k, v in rep.per_tag.items()}
    print(f"{args.output}: {out.width}x{out.height}, patches {counts}, {rep.total_macs} MACs")


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-thresholds": cmd_ablate_thresholds,
    "ablate-rolling": cmd_ablate_rolling,
    "ablate-depth": cmd_ablate_depth,
    "gain-analysis": cmd_gain_analysis,
    "classify-stats": cmd_classify_stats,
    "upscale": cmd_upscale,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.config:
        apply_config(args, args.config)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"prn {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
