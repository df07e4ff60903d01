"""Gaussian primitives, cameras, and the perspective projection chain.

Conventions used throughout the package:
  * quaternions are (w, x, y, z), renormalized before use
  * camera frame is x-right, y-up, z-forward; depth is camera-space z
  * pixel (ix, iy) has center (ix + 0.5, iy + 0.5) in projected coordinates

A 3D covariance factors as Sigma = R S S^T R^T with S = diag(exp(log_scale)).
Projection maps it through the camera rotation and the affine (Jacobian)
approximation of perspective division, then adds an isotropic screen-space
dilation acting as a low-pass guard against sub-pixel footprints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tone_map import sigmoid_eval

NEAR_PLANE = 0.01
CULL_SIGMA = 3.0
DILATION = 0.3


class DegenerateRotationError(ValueError):
    """Quaternion with (near-)zero norm cannot define a rotation."""


class NumericalDegeneracyError(ValueError):
    """A projected covariance lost positive-definiteness."""


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform and exposure."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray
    exposure_time: float = 1.0

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape != (4, 4):
            raise ValueError("world_to_camera must be 4x4")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.exposure_time <= 0:
            raise ValueError("exposure_time must be positive")
        R = self.world_to_camera[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-5):
            raise ValueError("world_to_camera rotation block is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]


@dataclass
class Gaussian3D:
    """One anisotropic Gaussian: geometry plus log-domain radiance."""

    mean: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    radiance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.radiance = np.asarray(self.radiance, dtype=np.float64)


@dataclass
class GaussianCloud:
    """Structure-of-arrays storage for a set of Gaussian3D."""

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    radiance: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.log_scales = np.atleast_2d(np.asarray(self.log_scales, dtype=np.float64))
        self.rotations = np.atleast_2d(np.asarray(self.rotations, dtype=np.float64))
        self.opacity_logits = np.atleast_1d(
            np.asarray(self.opacity_logits, dtype=np.float64)
        )
        self.radiance = np.atleast_2d(np.asarray(self.radiance, dtype=np.float64))
        n = self.means.shape[0]
        shapes = {
            "means": (n, 3),
            "log_scales": (n, 3),
            "rotations": (n, 4),
            "opacity_logits": (n,),
            "radiance": (n, 3),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} must have shape {want}, got {got}")

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def opacities(self) -> np.ndarray:
        return np.asarray(sigmoid_eval(self.opacity_logits))

    @classmethod
    def from_gaussians(cls, gaussians) -> "GaussianCloud":
        return cls(
            means=np.array([g.mean for g in gaussians]),
            log_scales=np.array([g.log_scale for g in gaussians]),
            rotations=np.array([g.rotation for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            radiance=np.array([g.radiance for g in gaussians]),
        )

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(
            means=np.zeros((0, 3)),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacity_logits=np.zeros(0),
            radiance=np.zeros((0, 3)),
        )

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(
            self.means[i], self.log_scales[i], self.rotations[i],
            float(self.opacity_logits[i]), self.radiance[i],
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.means.copy(), self.log_scales.copy(), self.rotations.copy(),
            self.opacity_logits.copy(), self.radiance.copy(),
        )

    def masked(self, keep: np.ndarray) -> "GaussianCloud":
        return GaussianCloud(
            self.means[keep], self.log_scales[keep], self.rotations[keep],
            self.opacity_logits[keep], self.radiance[keep],
        )


def as_cloud(scene) -> GaussianCloud:
    if isinstance(scene, GaussianCloud):
        return scene
    if isinstance(scene, Gaussian3D):
        return GaussianCloud.from_gaussians([scene])
    seq = list(scene)
    if not seq:
        return GaussianCloud.empty()
    return GaussianCloud.from_gaussians(seq)


@dataclass
class ProjectedGaussian:
    """Screen-space footprint of one Gaussian."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    radiance: np.ndarray


def normalize_quaternions(q: np.ndarray):
    """Unit quaternions and their norms; raises on zero-length input."""
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1)
    if np.any(norms < 1e-12):
        raise DegenerateRotationError("quaternion norm too small to normalize")
    return q / norms[..., None], norms


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions, renormalizing first."""
    n, _ = normalize_quaternions(q)
    w, x, y, z = n[..., 0], n[..., 1], n[..., 2], n[..., 3]
    R = np.empty(n.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def build_covariance(log_scale, rotation) -> np.ndarray:
    """Sigma = R S S^T R^T, broadcast over leading axes."""
    log_scale = np.asarray(log_scale, dtype=np.float64)
    s = np.exp(log_scale)
    R = quaternion_to_rotation(rotation)
    M = R * s[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def project_cloud(cloud: GaussianCloud, cam: Camera,
                  near: float = NEAR_PLANE,
                  cull_sigma: float = CULL_SIGMA,
                  dilation: float = DILATION):
    """Project all Gaussians; returns (mean2d, cov2d, depth, keep).

    keep is False for Gaussians behind the near plane or whose cull_sigma
    footprint lies entirely off-screen. Rows where keep is False contain
    placeholder values and must not be consumed.
    """
    W = cam.rotation
    t = cam.translation
    p = cloud.means @ W.T + t
    depth = p[:, 2]
    front = depth > near
    z = np.where(front, depth, 1.0)

    u = cam.fx * p[:, 0] / z + cam.cx
    v = cam.fy * p[:, 1] / z + cam.cy
    mean2d = np.stack([u, v], axis=1)

    sigma3 = build_covariance(cloud.log_scales, cloud.rotations)
    V = np.einsum("ij,njk,lk->nil", W, sigma3, W)

    J = np.zeros((cloud.n, 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * p[:, 0] / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * p[:, 1] / (z * z)
    cov2d = np.einsum("nij,njk,nlk->nil", J, V, J)
    cov2d[:, 0, 0] += dilation
    cov2d[:, 1, 1] += dilation

    # largest eigenvalue of the 2x2 footprint bounds its screen radius
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = cull_sigma * np.sqrt(np.maximum(lam_max, 0.0))
    onscreen = (
        (u + radius > 0.0) & (u - radius < cam.width)
        & (v + radius > 0.0) & (v - radius < cam.height)
    )
    keep = front & onscreen
    return mean2d, cov2d, depth, keep


def project_gaussian(g: Gaussian3D, cam: Camera) -> Optional[ProjectedGaussian]:
    """Single-Gaussian projection; None when culled."""
    cloud = GaussianCloud.from_gaussians([g])
    mean2d, cov2d, depth, keep = project_cloud(cloud, cam)
    if not keep[0]:
        return None
    return ProjectedGaussian(
        mean2d=mean2d[0],
        cov2d=cov2d[0],
        depth=float(depth[0]),
        opacity=float(sigmoid_eval(g.opacity_logit)),
        radiance=g.radiance.copy(),
    )


def evaluate_alpha(pg: ProjectedGaussian, pixel, alpha_clamp: float = 0.99) -> float:
    """Opacity-scaled Gaussian falloff at a pixel, clamped below 1."""
    cov = np.asarray(pg.cov2d, dtype=np.float64)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if not np.isfinite(det) or det <= 0 or cov[0, 0] <= 0:
        raise NumericalDegeneracyError("projected covariance is not positive definite")
    d = np.asarray(pixel, dtype=np.float64) - pg.mean2d
    q = (cov[1, 1] * d[0] * d[0] - 2.0 * cov[0, 1] * d[0] * d[1]
         + cov[0, 0] * d[1] * d[1]) / det
    return float(min(alpha_clamp, pg.opacity * np.exp(-0.5 * q)))


def _rotation_quat_basis(n: np.ndarray) -> np.ndarray:
    """dR/dn for normalized quaternions n: shape (N, 4, 3, 3)."""
    w, x, y, z = n[:, 0], n[:, 1], n[:, 2], n[:, 3]
    zero = np.zeros_like(w)
    B = np.empty((n.shape[0], 4, 3, 3))
    B[:, 0] = 2 * np.stack([
        np.stack([zero, -z, y], 1),
        np.stack([z, zero, -x], 1),
        np.stack([-y, x, zero], 1),
    ], 1)
    B[:, 1] = 2 * np.stack([
        np.stack([zero, y, z], 1),
        np.stack([y, -2 * x, -w], 1),
        np.stack([z, w, -2 * x], 1),
    ], 1)
    B[:, 2] = 2 * np.stack([
        np.stack([-2 * y, x, w], 1),
        np.stack([x, zero, z], 1),
        np.stack([-w, z, -2 * y], 1),
    ], 1)
    B[:, 3] = 2 * np.stack([
        np.stack([-2 * z, -w, x], 1),
        np.stack([w, -2 * z, y], 1),
        np.stack([x, y, zero], 1),
    ], 1)
    return B


def covariance_backward(log_scales, rotations, d_sigma3):
    """Adjoint of build_covariance for batched inputs.

    d_sigma3 is dL/dSigma taken entrywise on the full 3x3 matrix.
    """
    s = np.exp(np.asarray(log_scales, dtype=np.float64))
    n_q, norms = normalize_quaternions(rotations)
    R = quaternion_to_rotation(n_q)
    M = R * s[:, None, :]
    dM = (d_sigma3 + np.swapaxes(d_sigma3, -1, -2)) @ M
    dR = dM * s[:, None, :]
    ds = np.einsum("nij,nij->nj", R, dM)
    d_log_scales = ds * s

    B = _rotation_quat_basis(n_q)
    dn = np.einsum("nij,nkij->nk", dR, B)
    d_rotations = (dn - n_q * np.sum(n_q * dn, axis=1, keepdims=True)) / norms[:, None]
    return d_log_scales, d_rotations


def project_cloud_backward(cloud: GaussianCloud, cam: Camera,
                           d_mean2d, d_cov2d, keep,
                           near: float = NEAR_PLANE):
    """Adjoint of project_cloud w.r.t. means, log_scales, rotations.

    d_cov2d is dL/dSigma2D entrywise on the full 2x2 (dilation passes
    through); rows with keep False receive zero gradients.
    """
    W = cam.rotation
    t = cam.translation
    p = cloud.means @ W.T + t
    live = np.asarray(keep, dtype=bool)
    z = np.where(p[:, 2] > near, p[:, 2], 1.0)

    sigma3 = build_covariance(cloud.log_scales, cloud.rotations)
    V = np.einsum("ij,njk,lk->nil", W, sigma3, W)
    J = np.zeros((cloud.n, 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * p[:, 0] / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * p[:, 1] / (z * z)

    dC = np.where(live[:, None, None], np.asarray(d_cov2d, dtype=np.float64), 0.0)
    dm2 = np.where(live[:, None], np.asarray(d_mean2d, dtype=np.float64), 0.0)

    dV = np.einsum("nji,njk,nkl->nil", J, dC, J)
    d_sigma3 = np.einsum("ji,njk,kl->nil", W, dV, W)
    dJ = dC @ J @ np.swapaxes(V, -1, -2) + np.swapaxes(dC, -1, -2) @ J @ V

    fx, fy = cam.fx, cam.fy
    dp = np.zeros_like(p)
    dp[:, 0] = dm2[:, 0] * fx / z - dJ[:, 0, 2] * fx / (z * z)
    dp[:, 1] = dm2[:, 1] * fy / z - dJ[:, 1, 2] * fy / (z * z)
    dp[:, 2] = (
        -dm2[:, 0] * fx * p[:, 0] / (z * z)
        - dm2[:, 1] * fy * p[:, 1] / (z * z)
        - dJ[:, 0, 0] * fx / (z * z)
        - dJ[:, 1, 1] * fy / (z * z)
        + dJ[:, 0, 2] * 2.0 * fx * p[:, 0] / (z * z * z)
        + dJ[:, 1, 2] * 2.0 * fy * p[:, 1] / (z * z * z)
    )
    d_means = dp @ W

    d_log_scales, d_rotations = covariance_backward(
        cloud.log_scales, cloud.rotations, d_sigma3
    )
    d_log_scales[~live] = 0.0
    d_rotations[~live] = 0.0
    d_means[~live] = 0.0
    return d_means, d_log_scales, d_rotations
