"""HDR radiance fields from multi-exposure LDR images.

Differentiable Gaussian splatting over log-domain radiance, composed
with a learnable piecewise-linear camera response, trained coarse to
fine with shutter-time rescaling so one connected curve region covers
every exposure.
"""

from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .dataset import MultiExposureDataset, load_dataset, save_dataset
from .exposure import ExposureScaler, fit_scaler, hdr_from_learned, scale_time
from .geometry import Camera, Gaussian3D, GaussianCloud
from .losses import LossConfig, hdr_log_rmse, psnr, ssim, total_loss
from .presets import ablation_scene, ablation_schedule, toy_schedule
from .rasterizer import (
    RasterConfig,
    render_backward,
    render_irradiance,
    render_irradiance_reference,
)
from .synthetic import SceneSpec, generate_synthetic
from .tone_map import AsymmetricGrid, GridConfig, init_grid_from_sigmoid
from .trainer import TrainConfig, TrainData, TrainSample, render_ldr, train

__version__ = "0.1.0"

__all__ = [
    "AsymmetricGrid",
    "Camera",
    "ExposureScaler",
    "Gaussian3D",
    "GaussianCloud",
    "GridConfig",
    "LossConfig",
    "ModelCheckpoint",
    "MultiExposureDataset",
    "RasterConfig",
    "SceneSpec",
    "TrainConfig",
    "TrainData",
    "TrainSample",
    "ablation_scene",
    "ablation_schedule",
    "fit_scaler",
    "generate_synthetic",
    "hdr_from_learned",
    "hdr_log_rmse",
    "init_grid_from_sigmoid",
    "load_checkpoint",
    "load_dataset",
    "psnr",
    "render_backward",
    "render_irradiance",
    "render_irradiance_reference",
    "render_ldr",
    "save_checkpoint",
    "save_dataset",
    "scale_time",
    "ssim",
    "total_loss",
    "toy_schedule",
    "train",
]
