"""Coarse-to-fine training loop.

The coarse phase optimizes Gaussian parameters only, tone-mapping the
composited log radiance through a fixed sigmoid. At hand-off the
learnable grid is initialized to match that sigmoid, then the fine
phase jointly optimizes Gaussians and grid nodes. Each iteration
renders one uniformly sampled (view, exposure) training image, applies
the mixed loss, and steps every parameter group with bias-corrected
Adam. Low-contribution Gaussians are pruned on a fixed schedule that is
staggered against periodic opacity resets so a reset never immediately
triggers a mass prune.

All randomness (initialization, sampling, densify jitter) flows from
one seeded generator, so identical configs give bit-identical models.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .exposure import ExposureScaler, fit_scaler, scale_time
from .geometry import Camera, GaussianCloud
from .losses import LossConfig, total_loss
from .rasterizer import (
    ContributionScores,
    RasterConfig,
    RenderContext,
    render_irradiance,
    render_backward,
)
from .checkpoint import ModelCheckpoint
from .tone_map import (
    AsymmetricGrid,
    GridConfig,
    init_grid_from_sigmoid,
    sigmoid_backward,
    sigmoid_eval,
)

log = logging.getLogger(__name__)

LOG_HEADER = ["iter", "phase", "l1", "dssim", "smooth", "unit", "total", "points"]

__all__ = [
    "TrainConfig",
    "TrainSample",
    "TrainData",
    "NonFiniteLossError",
    "AdamState",
    "adam_step",
    "prune",
    "prune_due",
    "reset_due",
    "reset_opacity",
    "densify",
    "render_ldr",
    "train",
]


class NonFiniteLossError(RuntimeError):
    """Loss became NaN or infinite; carries a diagnostic payload."""


@dataclass
class TrainSample:
    camera: Camera
    image: np.ndarray
    view: int = 0
    exposure_level: int = 0

    @property
    def time(self) -> float:
        return self.camera.exposure_time


@dataclass
class TrainData:
    """In-memory training set; the dataset loader produces one per split."""

    samples: List[TrainSample]
    init_points: Optional[np.ndarray] = None
    scene_bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def exposure_times(self) -> np.ndarray:
        return np.unique([s.time for s in self.samples])


@dataclass
class TrainConfig:
    coarse_iters: int = 6000
    fine_iters: int = 17000
    lr_means: float = 1.6e-4
    lr_means_final: float = 1.6e-6
    lr_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacities: float = 0.05
    lr_radiance: float = 2.5e-3
    lr_grid: float = 0.02
    lr_grid_final: float = 5e-6
    # optional end-of-run targets for the groups that are constant by
    # default; tiny images make single-view gradients noisy enough that
    # annealing is needed to settle below the oscillation floor
    lr_scales_final: Optional[float] = None
    lr_rotations_final: Optional[float] = None
    lr_opacities_final: Optional[float] = None
    lr_radiance_final: Optional[float] = None
    prune_threshold: float = 0.02
    prune_start: int = 500
    prune_interval: int = 200
    opacity_reset_interval: int = 3000
    opacity_reset_ceiling: float = 0.01
    densify_enabled: bool = False
    densify_grad_threshold: float = 2e-4
    densify_interval: int = 500
    densify_max_points: int = 100_000
    n_init_points: int = 2000
    init_opacity: float = 0.1
    use_coarse: bool = True
    time_scaling: bool = True
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    raster: RasterConfig = field(default_factory=RasterConfig)

    def __post_init__(self):
        if self.coarse_iters <= 0 or self.fine_iters <= 0:
            raise ValueError("iteration counts must be positive")
        for name in ("lr_means", "lr_means_final", "lr_scales", "lr_rotations",
                     "lr_opacities", "lr_radiance", "lr_grid", "lr_grid_final"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lr_scales_final", "lr_rotations_final",
                     "lr_opacities_final", "lr_radiance_final"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive when set")
        if self.prune_start <= 0 or self.prune_interval <= 0:
            raise ValueError("prune schedule must be positive")
        if self.opacity_reset_interval <= 0:
            raise ValueError("opacity_reset_interval must be positive")

    def total_iters(self) -> int:
        return (self.coarse_iters if self.use_coarse else 0) + self.fine_iters

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=repr)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params))

    def masked(self, keep: np.ndarray) -> "AdamState":
        return AdamState(self.m[keep], self.v[keep], self.step)

    def extended(self, n_new: int) -> "AdamState":
        pad = (n_new,) + self.m.shape[1:]
        return AdamState(
            np.concatenate([self.m, np.zeros(pad)]),
            np.concatenate([self.v, np.zeros(pad)]),
            self.step,
        )


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15) -> None:
    """Bias-corrected Adam update, in place on params and state."""
    if params.shape != grad.shape:
        raise ValueError("parameter and gradient shapes differ")
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def reset_due(i: int, cfg: "TrainConfig") -> bool:
    return i % cfg.opacity_reset_interval == 0


def prune_due(i: int, last_reset: int, cfg: "TrainConfig") -> bool:
    """Prune schedule, staggered against opacity resets: never on a reset
    iteration and never within one prune interval after a reset."""
    on_schedule = (i >= cfg.prune_start
                   and (i - cfg.prune_start) % cfg.prune_interval == 0)
    return (on_schedule and not reset_due(i, cfg)
            and i - last_reset > cfg.prune_interval)


def prune(cloud: GaussianCloud, scores: ContributionScores,
          threshold: float) -> Tuple[GaussianCloud, np.ndarray]:
    """Remove Gaussians whose best contribution stayed below threshold.

    Returns the surviving cloud and the keep mask so optimizer state can
    be filtered in lockstep.
    """
    if scores.values.shape[0] != cloud.n:
        raise ValueError("scores do not match scene size")
    keep = scores.values >= threshold
    return cloud.masked(keep), keep


def reset_opacity(cloud: GaussianCloud, ceiling: float = 0.01) -> None:
    """Clamp every opacity to at most ceiling, in place (logit space)."""
    cloud.opacity_logits[:] = np.minimum(cloud.opacity_logits, _logit(ceiling))


def densify(cloud: GaussianCloud, accum_grad_norms: np.ndarray, threshold: float,
            rng: np.random.Generator, max_points: int) -> Tuple[GaussianCloud, int]:
    """Clone Gaussians with large accumulated positional gradients.

    Clones inherit all parameters; positions get a small jitter relative
    to each clone's own scale. Returns (cloud, number of clones).
    """
    hot = np.flatnonzero(accum_grad_norms > threshold)
    if hot.size == 0:
        return cloud, 0
    if cloud.n + hot.size > max_points:
        log.warning("densify skipped: %d + %d clones would exceed cap %d",
                    cloud.n, hot.size, max_points)
        return cloud, 0
    jitter = rng.normal(0.0, 1.0, (hot.size, 3)) * 0.1 * np.exp(cloud.log_scales[hot])
    grown = GaussianCloud(
        means=np.concatenate([cloud.means, cloud.means[hot] + jitter]),
        log_scales=np.concatenate([cloud.log_scales, cloud.log_scales[hot]]),
        rotations=np.concatenate([cloud.rotations, cloud.rotations[hot]]),
        opacity_logits=np.concatenate([cloud.opacity_logits, cloud.opacity_logits[hot]]),
        radiance=np.concatenate([cloud.radiance, cloud.radiance[hot]]),
    )
    return grown, int(hot.size)


def _init_cloud(data: TrainData, cfg: TrainConfig, rng: np.random.Generator) -> GaussianCloud:
    if data.init_points is not None and len(data.init_points):
        means = np.asarray(data.init_points, dtype=np.float64).copy()
    else:
        if data.scene_bounds is None:
            raise ValueError("dataset provides neither init points nor scene bounds")
        lo, hi = data.scene_bounds
        means = rng.uniform(lo, hi, (cfg.n_init_points, 3))
    n = means.shape[0]
    extent = float(np.linalg.norm(means.max(axis=0) - means.min(axis=0)))
    if extent <= 0:
        extent = 1.0
    if n > 1:
        # local point spacing sets each splat's footprint
        from scipy.spatial import cKDTree

        k = min(4, n)
        dists, _ = cKDTree(means).query(means, k=k)
        scale0 = np.clip(dists[:, 1:].mean(axis=1), 1e-3, extent / 4.0)
    else:
        scale0 = np.full(n, max(extent / 4.0, 1e-3))
    cloud = GaussianCloud(
        means=means,
        log_scales=np.tile(np.log(scale0)[:, None], (1, 3)),
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        opacity_logits=np.full(n, _logit(cfg.init_opacity)),
        radiance=np.zeros((n, 3)),
    )
    return cloud


def _exp_lr(lr0: float, lr1: float, step: int, total: int) -> float:
    if total <= 1:
        return lr0
    frac = (step - 1) / (total - 1)
    return lr0 * (lr1 / lr0) ** frac


def render_ldr(cloud: GaussianCloud, cam: Camera, scaler: ExposureScaler,
               grid: Optional[AsymmetricGrid], raster: Optional[RasterConfig] = None,
               scores: Optional[ContributionScores] = None,
               context: Optional[RenderContext] = None) -> np.ndarray:
    """Tone-mapped LDR prediction for one camera (unclamped values)."""
    img = render_irradiance(cloud, cam, raster, scores=scores, context=context)
    x = img.values + scale_time(scaler, cam.exposure_time)
    if grid is None:
        return np.asarray(sigmoid_eval(x))
    return grid.eval_rgb(x)


def train(data: TrainData, cfg: Optional[TrainConfig] = None,
          log_path=None, checkpoint_path=None) -> ModelCheckpoint:
    """Run the full schedule and return the final model.

    Writes a per-iteration CSV log when log_path is given and saves the
    final checkpoint when checkpoint_path is given.
    """
    cfg = cfg or TrainConfig()
    if not data.samples:
        raise ValueError("dataset has no training samples")
    times = data.exposure_times()
    if cfg.time_scaling:
        scaler = fit_scaler(times)
    else:
        scaler = ExposureScaler(1.0, 0.0)

    rng = np.random.default_rng(cfg.seed)
    cloud = _init_cloud(data, cfg, rng)
    grid: Optional[AsymmetricGrid] = None

    states = {
        "means": AdamState.like(cloud.means),
        "log_scales": AdamState.like(cloud.log_scales),
        "rotations": AdamState.like(cloud.rotations),
        "opacity_logits": AdamState.like(cloud.opacity_logits),
        "radiance": AdamState.like(cloud.radiance),
    }
    grid_state: Optional[AdamState] = None
    scores = ContributionScores.zeros(cloud.n)
    densify_accum = np.zeros(cloud.n)
    last_reset = -(10 ** 9)
    total = cfg.total_iters()
    coarse_end = cfg.coarse_iters if cfg.use_coarse else 0

    log_file = open(log_path, "w", newline="") if log_path is not None else None
    writer = None
    if log_file is not None:
        writer = csv.writer(log_file)
        writer.writerow(LOG_HEADER)

    try:
        for i in range(1, total + 1):
            if grid is None and i > coarse_end:
                grid = init_grid_from_sigmoid(cfg.grid.build())
            if grid is not None and grid_state is None:
                grid_state = AdamState.like(grid.node_values)
            phase = "coarse" if i <= coarse_end else "fine"

            sample = data.samples[int(rng.integers(0, len(data.samples)))]
            cam = sample.camera
            t_prime = scale_time(scaler, cam.exposure_time)
            ctx = RenderContext()
            rendered = render_irradiance(cloud, cam, cfg.raster, scores=scores,
                                         context=ctx)
            x = rendered.values + t_prime
            if phase == "coarse":
                pred = np.asarray(sigmoid_eval(x))
            else:
                pred = grid.eval_rgb(x)
            loss = total_loss(pred, sample.image, grid if phase == "fine" else None,
                              cfg.loss)
            if not math.isfinite(loss.total):
                raise NonFiniteLossError(
                    f"non-finite loss at iteration {i} (phase {phase}, "
                    f"view {sample.view}, exposure level {sample.exposure_level}): "
                    f"l1={loss.l1} dssim={loss.dssim} smooth={loss.smooth} "
                    f"unit={loss.unit}"
                )

            if phase == "coarse":
                dx = np.asarray(sigmoid_backward(x, loss.grad_image))
                node_grads = None
            else:
                dx, node_grads = grid.backward_rgb(x, loss.grad_image)
                node_grads = node_grads + loss.grid_grads
            grads = render_backward(cloud, cam, dx, cfg.raster, context=ctx)

            def _group_lr(lr0: float, lr1: Optional[float]) -> float:
                if lr1 is None:
                    return lr0
                return _exp_lr(lr0, lr1, i, total)

            lr_means = _exp_lr(cfg.lr_means, cfg.lr_means_final, i, total)
            group_updates = [
                ("means", cloud.means, grads.means, lr_means),
                ("log_scales", cloud.log_scales, grads.log_scales,
                 _group_lr(cfg.lr_scales, cfg.lr_scales_final)),
                ("rotations", cloud.rotations, grads.rotations,
                 _group_lr(cfg.lr_rotations, cfg.lr_rotations_final)),
                ("opacity_logits", cloud.opacity_logits, grads.opacity_logits,
                 _group_lr(cfg.lr_opacities, cfg.lr_opacities_final)),
                ("radiance", cloud.radiance, grads.radiance,
                 _group_lr(cfg.lr_radiance, cfg.lr_radiance_final)),
            ]
            for name, params, grad, lr in group_updates:
                if not np.all(np.isfinite(grad)):
                    log.warning("skipping %s update at iter %d: non-finite gradient",
                                name, i)
                    continue
                adam_step(params, grad, states[name], lr)
            if phase == "fine" and node_grads is not None:
                if np.all(np.isfinite(node_grads)):
                    lr_g = _exp_lr(cfg.lr_grid, cfg.lr_grid_final, i - coarse_end,
                                   cfg.fine_iters)
                    adam_step(grid.node_values, node_grads, grid_state, lr_g)
                    grid.node_values[:, 0] = 0.0
                    grid.node_values[:, -1] = 1.0
                else:
                    log.warning("skipping grid update at iter %d: non-finite gradient", i)

            if cfg.densify_enabled:
                densify_accum += np.linalg.norm(grads.means, axis=1)

            did_reset = reset_due(i, cfg)
            if did_reset:
                reset_opacity(cloud, cfg.opacity_reset_ceiling)
                last_reset = i

            if prune_due(i, last_reset, cfg):
                cloud, keep = prune(cloud, scores, cfg.prune_threshold)
                for name in states:
                    states[name] = states[name].masked(keep)
                scores = ContributionScores.zeros(cloud.n)
                densify_accum = densify_accum[keep]

            if (cfg.densify_enabled and i % cfg.densify_interval == 0
                    and not did_reset):
                cloud, n_new = densify(cloud, densify_accum,
                                       cfg.densify_grad_threshold, rng,
                                       cfg.densify_max_points)
                if n_new:
                    for name in states:
                        states[name] = states[name].extended(n_new)
                    scores.values = np.concatenate([scores.values, np.zeros(n_new)])
                densify_accum = np.zeros(cloud.n)

            if writer is not None:
                writer.writerow([
                    i, phase,
                    f"{loss.l1:.10g}", f"{loss.dssim:.10g}", f"{loss.smooth:.10g}",
                    f"{loss.unit:.10g}", f"{loss.total:.10g}", cloud.n,
                ])
    finally:
        if log_file is not None:
            log_file.close()

    ckpt = ModelCheckpoint(
        cloud=cloud, grid=grid, scaler=scaler,
        phase="fine", iteration=total, config_hash=cfg.hash(),
    )
    if checkpoint_path is not None:
        from .checkpoint import save_checkpoint

        save_checkpoint(checkpoint_path, ckpt)
    return ckpt
