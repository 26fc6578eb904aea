import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from edgekit.detectors import DEFAULT_LOG_SIGMA, DetectorId
from edgekit.errors import ConfigurationError, ShapeError, UnsupportedDetectorError
from edgekit.edgemetrics import (
    SsimParams,
    linear_responses,
    edge_loss,
    edge_loss_gradient,
    l1_loss,
    l2_loss,
    psnr,
    ssim,
    ssim_loss,
)
from edgekit.imagecore import GrayImage

square = arrays(np.float64, (14, 14), elements=st.floats(0, 1, allow_nan=False))


class TestPixelLosses:
    def test_brute_force_l1_l2(self, rng):
        a, b = rng.random((9, 7)), rng.random((9, 7))
        l1 = sum(abs(a[i, j] - b[i, j]) for i in range(9) for j in range(7)) / 63
        l2 = sum((a[i, j] - b[i, j]) ** 2 for i in range(9) for j in range(7)) / 63
        assert l1_loss(GrayImage(a), GrayImage(b)) == pytest.approx(l1, rel=1e-12)
        assert l2_loss(GrayImage(a), GrayImage(b)) == pytest.approx(l2, rel=1e-12)

    def test_identical_images_give_zero(self, rng):
        a = GrayImage(rng.random((5, 5)))
        assert l1_loss(a, a) == 0.0
        assert l2_loss(a, a) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(GrayImage(np.zeros((4, 4))), GrayImage(np.zeros((4, 5))))


class TestPsnr:
    def test_twenty_db_at_mse_hundredth(self):
        a = np.full((10, 10), 0.5)
        b = a + 0.1
        assert psnr(GrayImage(a), GrayImage(b)) == pytest.approx(20.0, abs=1e-9)

    def test_identical_is_infinite(self, rng):
        a = GrayImage(rng.random((6, 6)))
        assert psnr(a, a) == math.inf

    def test_dynamic_range(self):
        a, b = GrayImage(np.zeros((4, 4))), GrayImage(np.full((4, 4), 0.5))
        assert psnr(a, b, 2.0) - psnr(a, b) == pytest.approx(20 * math.log10(2), abs=1e-12)


class TestSsim:
    def test_matches_window_oracle(self, rng):
        for _ in range(3):
            a = rng.random((24, 24))
            b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
            assert ssim(GrayImage(a), GrayImage(b)) == pytest.approx(oracles.ssim_windows(a, b), abs=1e-6)

    def test_self_similarity_is_exactly_one(self, rng):
        for _ in range(5):
            a = GrayImage(rng.random((20, 20)))
            assert ssim(a, a) == 1.0
            assert ssim_loss(a, a) == 0.0

    def test_black_versus_white(self):
        # only the luminance term survives: C1 / (1 + C1)
        c1 = 0.01 ** 2
        got = ssim(GrayImage(np.zeros((16, 16))), GrayImage(np.ones((16, 16))))
        assert got == pytest.approx(c1 / (1 + c1), rel=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(square, square)
    def test_symmetric_and_bounded(self, a, b):
        s_ab = ssim(GrayImage(a), GrayImage(b))
        assert s_ab == pytest.approx(ssim(GrayImage(b), GrayImage(a)), abs=1e-12)
        assert -1 - 1e-9 <= s_ab <= 1 + 1e-9
        assert 0.0 <= ssim_loss(GrayImage(a), GrayImage(b)) <= 2.0

    def test_too_small_for_window(self):
        with pytest.raises(ShapeError):
            ssim(GrayImage(np.zeros((8, 8))), GrayImage(np.zeros((8, 8))))

    def test_params_validated(self):
        with pytest.raises(ConfigurationError):
            SsimParams(window=10)


def _non_kink(detector, x, gt, pix, h):
    # the loss is linear between x-h and x+h at this pixel iff no residual flips sign
    d = DetectorId.parse(detector)
    ref = linear_responses(d, gt, DEFAULT_LOG_SIGMA)
    signs = []
    for delta in (-h, h):
        xp = x.copy()
        xp[pix] += delta
        signs.append([np.sign(r - g) for r, g in zip(linear_responses(d, xp, DEFAULT_LOG_SIGMA), ref)])
    base = [np.sign(r - g) for r, g in zip(linear_responses(d, x, DEFAULT_LOG_SIGMA), ref)]
    return all(
        np.all(s == b) & np.all(b != 0) for sset in signs for s, b in zip(sset, base)
    )


@pytest.mark.parametrize("detector", ["sobel", "log"])
def test_gradient_matches_central_differences(detector, rng):
    h = 1e-5
    x = rng.uniform(0.1, 0.9, (20, 20))
    gt = rng.uniform(0.1, 0.9, (20, 20))
    grad = edge_loss_gradient(detector, GrayImage(x), GrayImage(gt))
    checked = 0
    for _ in range(400):
        pix = tuple(rng.integers(0, 20, 2))
        if not _non_kink(detector, x, gt, pix, h):
            continue
        xp, xm = x.copy(), x.copy()
        xp[pix] += h
        xm[pix] -= h
        fd = (edge_loss(detector, GrayImage(xp), GrayImage(gt)) - edge_loss(detector, GrayImage(xm), GrayImage(gt))) / (2 * h)
        if grad[pix] == 0.0:
            assert abs(fd) < 1e-9
            continue
        assert abs(grad[pix] - fd) < 1e-4 * abs(grad[pix])
        checked += 1
        if checked == 25:
            break
    assert checked == 25


def test_edge_loss_is_zero_for_identical_images(rng):
    a = GrayImage(rng.random((12, 12)))
    assert edge_loss("sobel", a, a) == 0.0
    assert not edge_loss_gradient("log", a, a).any()


def test_sobel_edge_loss_counts_both_directions():
    a = np.zeros((8, 8))
    b = np.zeros((8, 8))
    b[4, 4] = 1.0
    # a unit impulse moves gx and gy by 1 + 2 + 1 + 1 + 2 + 1 = 8 each in absolute sum
    assert edge_loss("sobel", GrayImage(a), GrayImage(b)) == pytest.approx(16 / 64)


@pytest.mark.parametrize("detector", ["canny", "hed"])
def test_non_linear_detectors_have_no_gradient(detector):
    img = GrayImage(np.zeros((8, 8)))
    with pytest.raises(UnsupportedDetectorError):
        edge_loss_gradient(detector, img, img)
