import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prn.prior import (
    DEFAULT_THRESHOLDS,
    Difficulty,
    Thresholds,
    classify,
    gradient_prior,
    prior_histogram,
)


def test_default_thresholds():
    assert (DEFAULT_THRESHOLDS.gamma_upper, DEFAULT_THRESHOLDS.gamma_low) == (10.0, 30.0)


def test_constant_patch_has_zero_prior():
    assert gradient_prior(np.full((18, 18), 0.7)) == 0.0


def test_horizontal_edge_matches_direct_sum():
    patch = np.zeros((18, 18))
    patch[9:] = 1.0
    total, count = 0.0, 0
    for r in range(17):
        for c in range(18):
            total += abs(patch[r + 1, c] - patch[r, c])
            count += 1
    assert gradient_prior(patch) == pytest.approx(255 * total / count)
    assert gradient_prior(patch) == pytest.approx(15.0)


def test_vertical_edge_is_ignored_by_default():
    patch = np.zeros((18, 18))
    patch[:, 9:] = 1.0
    assert gradient_prior(patch) == 0.0
    assert gradient_prior(patch, use_both_axes=True) == pytest.approx(7.5)


def test_l2_norm_option():
    patch = np.zeros((4, 3))
    patch[2:] = 0.5
    assert gradient_prior(patch, prior_norm="l2_mean") == pytest.approx(255 * math.sqrt(0.25 / 3))
    with pytest.raises(ValueError):
        gradient_prior(patch, prior_norm="linf")


def test_short_patch_rejected():
    with pytest.raises(ValueError):
        gradient_prior(np.zeros((1, 8)))


def test_accepts_tensor_layout():
    patch = np.random.default_rng(0).random((18, 18))
    assert gradient_prior(patch[None, None]) == gradient_prior(patch)


@given(st.floats(-0.5, 0.5), st.floats(0.1, 3.0), st.integers(0, 1000))
def test_shift_invariance_and_contrast_scaling(offset, gain, seed):
    patch = np.random.default_rng(seed).random((12, 9))
    base = gradient_prior(patch)
    assert gradient_prior(patch + offset) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert gradient_prior(patch * gain) == pytest.approx(gain * base, rel=1e-9)


@pytest.mark.parametrize(
    "prior,expected",
    [
        (0.0, Difficulty.MILD),
        (10.0, Difficulty.MILD),
        (10.0001, Difficulty.MODERATE),
        (30.0, Difficulty.MODERATE),
        (30.5, Difficulty.SEVERE),
        (31.0, Difficulty.SEVERE),
    ],
)
def test_classify_boundaries(prior, expected):
    assert classify(prior, Thresholds(10, 30)) is expected


def test_invalid_thresholds():
    with pytest.raises(ValueError):
        Thresholds(30, 10)
    with pytest.raises(ValueError):
        Thresholds(-1, 10)


def test_degenerate_thresholds():
    assert classify(0.0, Thresholds.all_severe()) is Difficulty.MILD
    assert classify(1e-9, Thresholds.all_severe()) is Difficulty.SEVERE
    assert classify(1e9, Thresholds.all_mild()) is Difficulty.MILD


@given(st.floats(0, 200), st.floats(0, 200), st.floats(0, 100), st.floats(0, 100))
def test_classify_monotone(p1, p2, a, b):
    t = Thresholds(min(a, b), max(a, b))
    lo, hi = sorted((p1, p2))
    assert classify(lo, t) <= classify(hi, t)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=50), st.floats(0, 50), st.floats(0, 50))
def test_tags_partition(priors, a, b):
    t = Thresholds(min(a, b), max(a, b))
    tags = [classify(p, t) for p in priors]
    assert sum(tags.count(d) for d in Difficulty) == len(priors)


def test_histogram_constant_patches():
    h = prior_histogram([np.full((6, 6), v) for v in (0.1, 0.5, 0.9)])
    assert list(h.counts) == [3]
    assert h.edges[0] == 0.0


def test_histogram_bimodal():
    rng = np.random.default_rng(1)
    flat = [np.full((18, 18), 0.5) + 0.002 * rng.random((18, 18)) for _ in range(40)]
    noisy = [rng.random((18, 18)) for _ in range(40)]
    h = prior_histogram(flat + noisy, bin_width=5.0)
    modes = h.modes()
    assert len(modes) == 2
    assert h.edges[modes[0]] < 5 < h.edges[modes[1]]
    assert h.counts.sum() == 80
    assert h.to_csv().startswith("bin_low,bin_high,count\n")


def test_histogram_empty():
    with pytest.raises(ValueError):
        prior_histogram([])
