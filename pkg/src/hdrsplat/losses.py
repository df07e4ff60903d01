"""Reconstruction losses on tone-mapped images, grid regularizers, metrics.

The total objective mixes mean absolute error with a structural
dissimilarity term, plus the tone-curve smoothness and unit-exposure
anchors when the learnable grid is active:

    L = (1 - lambda1) * L1 + lambda1 * DSSIM
        + lambda2 * L_smooth + lambda3 * L_unit

Structural similarity uses a single-scale 11x11 Gaussian window (sigma
1.5, C1 = 0.01^2, C2 = 0.03^2) evaluated on the fully covered interior
so no padding convention leaks into gradients. Losses act on unclamped
tone-mapped values; clamping to [0,1] happens only at image export, so
out-of-range predictions still receive gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .tone_map import AsymmetricGrid, smoothness_loss, unit_exposure_loss

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 99.0

__all__ = [
    "LossConfig",
    "TotalLoss",
    "l1_loss",
    "ssim",
    "dssim_loss",
    "total_loss",
    "psnr",
    "hdr_log_rmse",
    "hdr_median_ratio",
]


@dataclass
class LossConfig:
    lambda1: float = 0.2
    lambda2: float = 0.3
    lambda3: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.lambda1 <= 1.0):
            raise ValueError("lambda1 must lie in [0, 1]")
        if self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError("lambda2 and lambda3 must be nonnegative")


def _window() -> np.ndarray:
    half = (WINDOW_SIZE - 1) / 2
    x = np.arange(WINDOW_SIZE) - half
    w = np.exp(-(x ** 2) / (2.0 * WINDOW_SIGMA ** 2))
    return w / w.sum()


_W = _window()
_K = WINDOW_SIZE // 2


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def l1_loss(pred, target) -> Tuple[float, np.ndarray]:
    """Mean absolute error and its subgradient (0 at exact ties)."""
    pred, target = _check_pair(pred, target)
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad


def _blur_valid(img: np.ndarray) -> np.ndarray:
    """Separable window correlation, cropped to fully covered pixels."""
    out = correlate1d(img, _W, axis=0, mode="constant")
    out = correlate1d(out, _W, axis=1, mode="constant")
    return out[_K:-_K, _K:-_K]


def _blur_valid_adjoint(upstream: np.ndarray, height: int, width: int) -> np.ndarray:
    """Exact transpose of _blur_valid (window is symmetric)."""
    full = np.zeros((height, width) + upstream.shape[2:])
    full[_K:-_K, _K:-_K] = upstream
    full = correlate1d(full, _W, axis=0, mode="constant")
    return correlate1d(full, _W, axis=1, mode="constant")


def _ssim_terms(pred, target):
    mu_x = _blur_valid(pred)
    mu_y = _blur_valid(target)
    x2 = _blur_valid(pred * pred)
    y2 = _blur_valid(target * target)
    xy = _blur_valid(pred * target)
    var_x = x2 - mu_x * mu_x
    var_y = y2 - mu_y * mu_y
    cov = xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + SSIM_C1
    a2 = 2.0 * cov + SSIM_C2
    b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    b2 = var_x + var_y + SSIM_C2
    return mu_x, mu_y, a1, a2, b1, b2


def ssim(pred, target) -> float:
    pred, target = _check_pair(pred, target)
    if pred.shape[0] < WINDOW_SIZE or pred.shape[1] < WINDOW_SIZE:
        raise ValueError(f"images must be at least {WINDOW_SIZE}x{WINDOW_SIZE}")
    _, _, a1, a2, b1, b2 = _ssim_terms(pred, target)
    return float(np.mean(a1 * a2 / (b1 * b2)))


def dssim_loss(pred, target) -> Tuple[float, np.ndarray]:
    """(1 - SSIM)/2 with its gradient with respect to pred."""
    pred, target = _check_pair(pred, target)
    if pred.shape[0] < WINDOW_SIZE or pred.shape[1] < WINDOW_SIZE:
        raise ValueError(f"images must be at least {WINDOW_SIZE}x{WINDOW_SIZE}")
    h, w = pred.shape[:2]
    mu_x, mu_y, a1, a2, b1, b2 = _ssim_terms(pred, target)
    denom = b1 * b2
    s = a1 * a2 / denom
    n = s.size
    # d(dssim)/ds = -1/(2n) per map entry
    u = np.full_like(s, -0.5 / n)
    ds_a1 = u * a2 / denom
    ds_a2 = u * a1 / denom
    ds_b1 = -u * s / b1
    ds_b2 = -u * s / b2
    # var/cov expand as blurred moments minus products of means
    g_mu = ds_a1 * 2.0 * mu_y + ds_b1 * 2.0 * mu_x \
        + ds_a2 * 2.0 * (-mu_y) + ds_b2 * (-2.0 * mu_x)
    g_x2 = ds_b2
    g_xy = ds_a2 * 2.0
    grad = _blur_valid_adjoint(g_mu, h, w)
    grad += _blur_valid_adjoint(g_x2, h, w) * 2.0 * pred
    grad += _blur_valid_adjoint(g_xy, h, w) * target
    return float(0.5 * (1.0 - np.mean(s))), grad


@dataclass
class TotalLoss:
    total: float
    l1: float
    dssim: float
    smooth: float
    unit: float
    grad_image: np.ndarray
    grid_grads: Optional[np.ndarray] = field(default=None)


def total_loss(pred_ldr, target_ldr, grid: Optional[AsymmetricGrid],
               cfg: Optional[LossConfig] = None) -> TotalLoss:
    """Mixed objective; grid terms are skipped when grid is None (the
    coarse phase trains through the fixed sigmoid mapper)."""
    cfg = cfg or LossConfig()
    v1, g1 = l1_loss(pred_ldr, target_ldr)
    vd, gd = dssim_loss(pred_ldr, target_ldr)
    grad_image = (1.0 - cfg.lambda1) * g1 + cfg.lambda1 * gd
    smooth = 0.0
    unit = 0.0
    grid_grads = None
    if grid is not None:
        smooth, g_smooth = smoothness_loss(grid)
        unit, g_unit = unit_exposure_loss(grid)
        grid_grads = cfg.lambda2 * g_smooth + cfg.lambda3 * g_unit
    total = ((1.0 - cfg.lambda1) * v1 + cfg.lambda1 * vd
             + cfg.lambda2 * smooth + cfg.lambda3 * unit)
    return TotalLoss(total=float(total), l1=v1, dssim=vd, smooth=float(smooth),
                     unit=float(unit), grad_image=grad_image, grid_grads=grid_grads)


def psnr(pred, target) -> float:
    """Peak signal-to-noise ratio in dB on [0,1]-range images, capped."""
    pred, target = _check_pair(pred, target)
    mse = float(np.mean((pred - target) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def hdr_log_rmse(pred_hdr, gt_hdr) -> Tuple[float, int]:
    """RMSE of log radiance after the optimal scalar log offset.

    The offset removes the global scale freedom of a jointly learned
    radiance field and tone curve. Nonpositive or non-finite pixels are
    excluded; their count is returned alongside the value.
    """
    pred, gt = _check_pair(pred_hdr, gt_hdr)
    mask = (pred > 0) & (gt > 0) & np.isfinite(pred) & np.isfinite(gt)
    n_excluded = int(pred.size - np.count_nonzero(mask))
    if not np.any(mask):
        raise ValueError("no valid positive pixels for log RMSE")
    d = np.log(pred[mask]) - np.log(gt[mask])
    d -= d.mean()
    return float(np.sqrt(np.mean(d * d))), n_excluded


def hdr_median_ratio(pred_hdr, gt_hdr) -> float:
    """Median of pred/gt over valid pixels, without any alignment."""
    pred, gt = _check_pair(pred_hdr, gt_hdr)
    mask = (pred > 0) & (gt > 0) & np.isfinite(pred) & np.isfinite(gt)
    if not np.any(mask):
        raise ValueError("no valid positive pixels for ratio")
    return float(np.median(pred[mask] / gt[mask]))
