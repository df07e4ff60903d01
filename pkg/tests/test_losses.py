"""Loss and metric tests; all gradients verified against central finite
differences, SSIM additionally cross-checked by a dense naive oracle."""

import numpy as np
import pytest

from hdrsplat.losses import (
    LossConfig,
    dssim_loss,
    hdr_log_rmse,
    hdr_median_ratio,
    l1_loss,
    psnr,
    ssim,
    total_loss,
)
from hdrsplat.tone_map import GridConfig, init_grid_from_sigmoid, smoothness_loss, unit_exposure_loss


def rand_pair(seed, h=16, w=16, c=3):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (h, w, c)), rng.uniform(0, 1, (h, w, c))


def naive_ssim(pred, target):
    """Dense per-window oracle: explicit loops, no separable tricks."""
    half = 5
    x = np.arange(11) - 5
    w1 = np.exp(-(x ** 2) / (2 * 1.5 ** 2))
    w1 /= w1.sum()
    win = np.outer(w1, w1)
    h, w, c = pred.shape
    vals = []
    for ch in range(c):
        for i in range(half, h - half):
            for j in range(half, w - half):
                px = pred[i - half:i + half + 1, j - half:j + half + 1, ch]
                py = target[i - half:i + half + 1, j - half:j + half + 1, ch]
                mx = (win * px).sum()
                my = (win * py).sum()
                vx = (win * px * px).sum() - mx * mx
                vy = (win * py * py).sum() - my * my
                cxy = (win * px * py).sum() - mx * my
                c1, c2 = 0.01 ** 2, 0.03 ** 2
                vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


class TestL1:
    def test_identical_is_zero(self):
        a, _ = rand_pair(0)
        loss, grad = l1_loss(a, a)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_constant_offset(self):
        a, _ = rand_pair(1)
        loss, _ = l1_loss(a + 0.125, a)
        assert loss == pytest.approx(0.125, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        pred, target = rand_pair(2, 6, 5)
        _, grad = l1_loss(pred, target)
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(15):
            idx = tuple(rng.integers(0, s) for s in pred.shape)
            pp, pm = pred.copy(), pred.copy()
            pp[idx] += h
            pm[idx] -= h
            fd = (l1_loss(pp, target)[0] - l1_loss(pm, target)[0]) / (2 * h)
            assert grad[idx] == pytest.approx(fd, abs=1e-5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            l1_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_images(self):
        a, _ = rand_pair(4)
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
        loss, _ = dssim_loss(a, a)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_negation_about_mean_is_anticorrelated(self):
        a, _ = rand_pair(5, 24, 24)
        flipped = 2 * a.mean() - a
        assert ssim(a, flipped) < 0.0

    def test_matches_naive_oracle(self):
        pred, target = rand_pair(6, 14, 15)
        assert ssim(pred, target) == pytest.approx(naive_ssim(pred, target), abs=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

    def test_dssim_range(self):
        for seed in range(5):
            pred, target = rand_pair(seed, 16, 16)
            loss, _ = dssim_loss(pred, target)
            assert 0.0 <= loss <= 1.0

    def test_gradient_matches_finite_differences(self):
        pred, target = rand_pair(7, 13, 12)
        _, grad = dssim_loss(pred, target)
        rng = np.random.default_rng(8)
        h = 1e-5
        for _ in range(20):
            idx = tuple(rng.integers(0, s) for s in pred.shape)
            pp, pm = pred.copy(), pred.copy()
            pp[idx] += h
            pm[idx] -= h
            fd = (dssim_loss(pp, target)[0] - dssim_loss(pm, target)[0]) / (2 * h)
            err = abs(grad[idx] - fd) / max(abs(fd), abs(grad[idx]), 1e-6)
            assert err < 1e-3


class TestTotalLoss:
    def test_identical_and_no_grid_terms(self):
        a, _ = rand_pair(9)
        out = total_loss(a, a, None, LossConfig(lambda2=0.0, lambda3=0.0))
        assert out.total == pytest.approx(0.0, abs=1e-12)
        assert out.grid_grads is None
        assert out.smooth == 0.0 and out.unit == 0.0

    def test_lambda1_zero_reduces_to_l1_plus_grid(self):
        pred, target = rand_pair(10)
        grid = init_grid_from_sigmoid(GridConfig().build())
        cfg = LossConfig(lambda1=0.0, lambda2=0.3, lambda3=0.5)
        out = total_loss(pred, target, grid, cfg)
        expected = (l1_loss(pred, target)[0]
                    + 0.3 * smoothness_loss(grid)[0]
                    + 0.5 * unit_exposure_loss(grid)[0])
        assert out.total == pytest.approx(expected, rel=1e-12)

    def test_synthetic_default_weights(self):
        cfg = LossConfig()
        assert cfg.lambda1 == 0.2
        assert cfg.lambda2 == 0.3
        assert cfg.lambda3 == 0.5

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(lambda1=1.5)
        with pytest.raises(ValueError):
            LossConfig(lambda2=-0.1)

    def test_image_gradient_matches_finite_differences(self):
        pred, target = rand_pair(11, 16, 16)
        grid = init_grid_from_sigmoid(GridConfig().build())
        cfg = LossConfig()
        out = total_loss(pred, target, grid, cfg)
        rng = np.random.default_rng(12)
        h = 1e-5
        for _ in range(12):
            idx = tuple(rng.integers(0, s) for s in pred.shape)
            pp, pm = pred.copy(), pred.copy()
            pp[idx] += h
            pm[idx] -= h
            fd = (total_loss(pp, target, grid, cfg).total
                  - total_loss(pm, target, grid, cfg).total) / (2 * h)
            err = abs(out.grad_image[idx] - fd) / max(abs(fd), abs(out.grad_image[idx]), 1e-6)
            assert err < 1e-3

    def test_grid_gradient_matches_finite_differences(self):
        pred, target = rand_pair(13, 16, 16)
        grid = init_grid_from_sigmoid(GridConfig().build())
        rng = np.random.default_rng(1)
        grid.node_values[:, 1:-1] += rng.normal(0, 0.05, (3, grid.n_nodes - 2))
        cfg = LossConfig()
        out = total_loss(pred, target, grid, cfg)
        h = 1e-6
        for _ in range(10):
            c = rng.integers(0, 3)
            j = rng.integers(1, grid.n_nodes - 1)
            gp, gm = grid.copy(), grid.copy()
            gp.node_values[c, j] += h
            gm.node_values[c, j] -= h
            fd = (total_loss(pred, target, gp, cfg).total
                  - total_loss(pred, target, gm, cfg).total) / (2 * h)
            err = abs(out.grid_grads[c, j] - fd) / max(abs(fd), abs(out.grid_grads[c, j]), 1e-6)
            assert err < 1e-3


class TestMetrics:
    def test_psnr_identical_capped(self):
        a, _ = rand_pair(14)
        assert psnr(a, a) == 99.0

    def test_psnr_closed_form(self):
        pred = np.zeros((10, 10, 3))
        target = np.full((10, 10, 3), 0.01)
        assert psnr(pred, target) == pytest.approx(40.0, abs=1e-9)

    def test_log_rmse_scale_invariant(self):
        rng = np.random.default_rng(15)
        gt = rng.uniform(0.01, 10.0, (8, 8, 3))
        pred = gt * np.exp(rng.normal(0, 0.1, gt.shape))
        base, n0 = hdr_log_rmse(pred, gt)
        for c in (0.001, 7.3, 1e4):
            scaled, n1 = hdr_log_rmse(pred, gt * c)
            assert scaled == pytest.approx(base, rel=1e-9)
            assert n1 == n0 == 0
        scaled, _ = hdr_log_rmse(pred * 42.0, gt)
        assert scaled == pytest.approx(base, rel=1e-9)

    def test_log_rmse_excludes_nonpositive(self):
        gt = np.ones((4, 4, 3))
        pred = np.ones((4, 4, 3))
        pred[0, 0, 0] = -1.0
        pred[0, 0, 1] = 0.0
        val, n = hdr_log_rmse(pred, gt)
        assert n == 2
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_log_rmse_exact_value(self):
        gt = np.ones((1, 2, 1))
        pred = np.array([[[np.e], [1.0]]])
        # offsets to zero mean: +-0.5 in log space
        val, _ = hdr_log_rmse(pred, gt)
        assert val == pytest.approx(0.5, abs=1e-12)

    def test_median_ratio(self):
        gt = np.ones((5, 5, 3))
        pred = np.full((5, 5, 3), 1.1)
        assert hdr_median_ratio(pred, gt) == pytest.approx(1.1, rel=1e-12)
        assert hdr_median_ratio(pred * 2, gt) == pytest.approx(2.2, rel=1e-12)
