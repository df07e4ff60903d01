"""Tuned training schedules for the bundled synthetic scenes.

The library defaults in TrainConfig mirror the reference settings for
full-scale scenes (thousands of iterations per phase, constant group
learning rates). The desk-scale presets here trade schedule length for
wall-clock time on a single CPU core: shorter phases, gentler pruning so
a ~260-splat scene keeps its capacity, and annealed geometry learning
rates because tiny single-view batches leave a visible stochastic noise
floor at a constant step size.
"""

from .synthetic import SceneSpec
from .trainer import TrainConfig

__all__ = ["toy_schedule", "ablation_scene", "ablation_schedule"]


def toy_schedule(seed: int = 0) -> TrainConfig:
    """Schedule for the default 64x64 synthetic scene, under 10 CPU-min.

    Tuned so a full run reaches the documented targets: per-channel tone
    curve MAE under 0.02 against the generating curve, scale-aligned log
    irradiance RMSE under 0.05, unaligned median ratio within [0.8, 1.25].
    """
    return TrainConfig(
        coarse_iters=1200,
        fine_iters=8300,
        prune_threshold=0.005,
        prune_start=2000,
        prune_interval=400,
        # one reset would land mid-run and spend the remaining budget
        # re-learning opacities; the staggering logic is exercised by the
        # unit suite instead
        opacity_reset_interval=10**9,
        # radiance keeps a constant step: after the warm-start handoff the
        # per-channel brightness scale has to drift about two log units
        # toward the anchored one, and that drift moves at a rate set by
        # this lr; annealing it (or starving the curve lr it works against)
        # strands the drift partway
        lr_radiance=8e-3,
        lr_scales_final=1e-4,
        lr_rotations_final=2e-5,
        lr_opacities_final=1e-3,
        seed=seed,
    )


def ablation_scene(seed: int = 3) -> SceneSpec:
    """Five-exposure scene small enough to train several variants in a row."""
    return SceneSpec(
        n_foreground=56,
        backdrop_cells=7,
        n_views=7,
        n_test_views=2,
        width=48,
        height=48,
        focal=52.0,
        exposure_times=(1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0),
        crf_samples=256,
        seed=seed,
    )


def ablation_schedule(seed: int = 0) -> TrainConfig:
    """toy_schedule with the response curve kept mobile to the end.

    Comparison runs train on strict exposure subsets, where the shared
    brightness-scale freedom drifts toward the anchored gauge far more
    slowly than on the default scene. A higher terminal curve lr lets
    that drift finish instead of freezing mid-way; a frozen half-drifted
    curve is distorted exactly in the exposure-gap input regions that
    held-out-exposure scoring reads out.
    """
    cfg = toy_schedule(seed)
    cfg.lr_grid_final = 2e-3
    return cfg
