import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prn.evalbench import (
    PSNR_CAP,
    Recipe,
    ablate_rolling,
    ablate_stage_depth,
    ablate_thresholds,
    evaluate_dataset,
    gain_analysis,
    load_dataset,
    psnr,
    ssim,
    threshold_grid,
    timing_report,
)
from prn.imagepipe import ColorImage, bicubic_resize, save_image
from prn.prior import DEFAULT_THRESHOLDS, Difficulty, Thresholds
from prn.prnet import build_model, count_flops, super_resolve_plane
from prn.synthetic import half_flat_half_noise, mixed_corpus, texture_corpus
from prn.training import TrainConfig


@pytest.fixture(scope="module")
def tiny():
    return build_model(scales=(3,), channels=4, seed=0)


@pytest.fixture(scope="module")
def corpus():
    return mixed_corpus(3, 108, flat_fraction=0.5, seed=4)


# psnr


def test_psnr_identical_is_capped():
    x = np.random.default_rng(0).random((20, 20))
    assert psnr(x, x) == PSNR_CAP


def test_psnr_uniform_offset():
    x = np.full((16, 16), 0.3)
    expected = 10 * math.log10(255**2 / 256)
    assert psnr(x + 16 / 255, x) == pytest.approx(expected)
    assert expected == pytest.approx(24.05, abs=5e-3)


def test_psnr_shave_ignores_border():
    a = np.zeros((10, 10))
    b = a.copy()
    b[0, :] = 1.0
    assert psnr(a, b, shave=1) == PSNR_CAP
    assert psnr(a, b) < PSNR_CAP


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 3))
def test_psnr_symmetric(seed, shave):
    rng = np.random.default_rng(seed)
    a, b = rng.random((12, 9)), rng.random((12, 9))
    assert psnr(a, b, shave) == psnr(b, a, shave)


def test_psnr_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 3)), np.zeros((3, 3)), shave=-1)


# ssim


def test_ssim_identical():
    x = np.random.default_rng(1).random((24, 30))
    assert ssim(x, x) == pytest.approx(1.0)


def test_ssim_negative_image_low():
    x = np.random.default_rng(2).random((32, 32))
    assert ssim(x, 1 - x) < 0.5


def test_ssim_constant_planes_luminance_term():
    a, b = np.full((11, 11), 0.2), np.full((11, 11), 0.7)
    c1 = 0.01**2
    expected = (2 * 0.2 * 0.7 + c1) / (0.2**2 + 0.7**2 + c1)
    assert ssim(a, b) == pytest.approx(expected, rel=1e-12)


def test_ssim_matches_scikit_image():
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(3)
    a = rng.random((40, 33))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ref = metrics.structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_errors():
    with pytest.raises(ValueError):
        ssim(np.zeros((11, 11)), np.zeros((11, 12)))
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# datasets


def test_load_dataset_dir_sorted(tmp_path):
    for name, v in [("b.png", 40), ("a.ppm", 200)]:
        save_image(ColorImage.from_uint8(np.full((12, 12, 3), v, np.uint8)), tmp_path / name)
    (tmp_path / "notes.txt").write_text("x")
    items = load_dataset(tmp_path)
    assert [n for n, _ in items] == ["a.ppm", "b.png"]
    assert items[0][1].shape == (12, 12)


def test_load_dataset_empty(tmp_path):
    with pytest.raises(ValueError):
        load_dataset(tmp_path)
    with pytest.raises(ValueError):
        load_dataset([])


# evaluate_dataset


def test_report_means_recompute(tiny, corpus):
    rep = evaluate_dataset(tiny, corpus, 3)
    assert len(rep.rows) == 3
    assert rep.mean_psnr == np.mean([r.psnr for r in rep.rows])
    assert rep.mean_macs == np.mean([r.macs for r in rep.rows])
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("image,psnr,ssim") and len(lines) == 4
    assert "| Bicubic | x3 |" in rep.to_markdown()


def test_report_macs_equal_count_flops(tiny, corpus):
    rep = evaluate_dataset(tiny, corpus[:1], 3)
    _, traces, _ = super_resolve_plane(tiny, bicubic_resize(corpus[0], 36, 36), 3)
    assert rep.rows[0].macs == sum(count_flops(tiny, t, 18, 18, 3) for t in traces)


def test_evaluation_is_deterministic(tiny, corpus):
    a = evaluate_dataset(tiny, corpus, 3).to_csv(timing=False)
    b = evaluate_dataset(tiny, corpus, 3).to_csv(timing=False)
    assert a == b


def test_thresholds_change_macs_not_image_set(tiny, corpus):
    full = evaluate_dataset(tiny.with_thresholds(Thresholds.all_severe()), corpus, 3)
    early = evaluate_dataset(tiny.with_thresholds(Thresholds.all_mild()), corpus, 3)
    assert [r.name for r in full.rows] == [r.name for r in early.rows]
    assert early.total_macs < full.total_macs
    assert full.tag_counts["severe"] == early.tag_counts["mild"]


def test_bicubic_baseline_is_model_independent(corpus):
    a = evaluate_dataset(build_model(scales=(3,), channels=4, seed=1), corpus, 3)
    b = evaluate_dataset(build_model(scales=(3,), channels=4, seed=2), corpus, 3)
    assert [r.bicubic_psnr for r in a.rows] == [r.bicubic_psnr for r in b.rows]


# gain analysis


def _bicubic_sr(lr, scale):
    return bicubic_resize(lr, lr.shape[1] * scale, lr.shape[0] * scale)


def test_gain_constant_image_all_failure():
    res = gain_analysis(_bicubic_sr, [np.full((108, 108), 0.6)], 3)
    assert not res.successful and len(res.failure) == 4
    assert all(p.gain == 0 for p in res.failure)


def test_gain_threshold_zero_ties_count_as_successful():
    res = gain_analysis(_bicubic_sr, texture_corpus(1, 108, seed=0), 3, gain_threshold=0.0)
    assert not res.failure and len(res.successful) == 4


def test_gain_split_by_prior():
    # an SR that is uniformly ~40 dB gains on texture and loses on flat regions
    imgs = [half_flat_half_noise(108, np.random.default_rng(i), amplitude=0.4) for i in range(2)]
    noise = 0.01 * np.random.default_rng(9).standard_normal((108, 108))

    def near_perfect(lr, scale):
        for img in imgs:
            if np.allclose(bicubic_resize(img, 36, 36), lr):
                return img + noise
        raise AssertionError

    res = gain_analysis(near_perfect, imgs, 3)
    assert res.successful and res.failure
    assert res.successful_stats["mean_prior"] > res.failure_stats["mean_prior"]
    ok, bad = res.histograms()
    assert ok.counts.sum() == len(res.successful) and bad.counts.sum() == len(res.failure)
    assert np.array_equal(ok.edges, bad.edges)
    assert res.to_csv().startswith("image,patch,split,prior")


def test_gain_accepts_model(tiny):
    res = gain_analysis(tiny, texture_corpus(1, 108, seed=5), 3)
    assert len(res.successful) + len(res.failure) == 4


# ablations


def test_threshold_grid_shape():
    grid = threshold_grid()
    assert len(grid) == 13
    pairs = [(t.gamma_upper, t.gamma_low) for _, t in grid]
    assert pairs == sorted(pairs)
    assert all(u <= lo for u, lo in pairs)
    assert (10.0, 30.0) in pairs and dict(grid)["L1U1"] == DEFAULT_THRESHOLDS


def test_threshold_sweep_macs_monotone(tiny, corpus):
    rep = ablate_thresholds(tiny, corpus, 3)
    assert len(rep.rows) == 13
    assert sum(rep.column("default")) == 1
    by_upper = {}
    for up, low, macs in zip(rep.column("gamma_upper"), rep.column("gamma_low"), rep.column("mean_macs")):
        by_upper.setdefault(up, []).append((low, macs))
    for rows in by_upper.values():
        macs = [m for _, m in sorted(rows)]
        assert all(b <= a for a, b in zip(macs, macs[1:]))
    assert rep.to_csv().startswith("label,gamma_upper,gamma_low,default")


def test_threshold_sweep_single_point(tiny, corpus):
    rep = ablate_thresholds(tiny, corpus[:1], 3, grid=[("only", Thresholds(5, 6))])
    assert len(rep.rows) == 1


def _quick_recipe():
    cfg = TrainConfig(batch_size=8, lr=1e-3, epochs=1)
    return Recipe(texture_corpus(1, 108, seed=6), scale=3, config=cfg, channels=4)


def test_threshold_sweep_retrain():
    rep = ablate_thresholds(_quick_recipe(), texture_corpus(1, 54, seed=7), 3, grid=threshold_grid()[:2], retrain=True)
    assert len(rep.rows) == 2
    with pytest.raises(ValueError):
        ablate_thresholds(build_model(channels=4), [np.zeros((54, 54))], 3, retrain=True)


def test_ablate_rolling_rows():
    rep = ablate_rolling(_quick_recipe(), texture_corpus(1, 54, seed=8))
    assert rep.column("rolling") == [False, True]
    off = dict(zip(rep.fields, rep.rows[0]))
    assert all(off[f"stages_{t.label}"].startswith("theta_l+") for t in Difficulty)
    assert rep.reference["desk_reproducible"] is False
    assert rep.reference["rolling_on_psnr"] - rep.reference["rolling_off_psnr"] == pytest.approx(0.09)


def test_ablate_depth_rows():
    rep = ablate_stage_depth(_quick_recipe(), texture_corpus(1, 54, seed=9), grid=((1, 2), (2, 2), (3, 2)))
    macs = rep.column("severe_macs_per_patch")
    assert macs == sorted(macs) and len(set(macs)) == 3
    assert rep.column("ref_psnr") == [27.12, 27.13, 27.15]
    default = build_model(scales=(3,), channels=4)
    assert rep.rows[0][2] == sum(p.weights.size + p.bias.size for p in default.layers.values())


# timing


def test_timing_all_mild(tiny):
    plane = np.full((36, 36), 0.5)
    _, traces, re = super_resolve_plane(tiny, plane, 3)
    rep = timing_report([traces], [re])
    assert rep.mean_macs == 4 * count_flops(tiny, Difficulty.MILD, 18, 18, 3)
    assert rep.per_tag["mild"]["count"] == 4
    assert rep.total_time == pytest.approx(rep.network_time + re)


def test_timing_per_tag_rows_sum(tiny):
    per_image, re = [], []
    for img in mixed_corpus(2, 108, seed=1):
        _, tr, r = super_resolve_plane(tiny, bicubic_resize(img, 36, 36), 3)
        per_image.append(tr)
        re.append(r)
    rep = timing_report(per_image, re)
    assert sum(v["macs"] for v in rep.per_tag.values()) == rep.total_macs
    assert sum(v["count"] for v in rep.per_tag.values()) == 8
    assert rep.n_images == 2 and "reassembly" in rep.to_markdown()


def test_timing_empty():
    with pytest.raises(ValueError):
        timing_report([])
