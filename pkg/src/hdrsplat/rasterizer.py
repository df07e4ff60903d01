"""Tile-based splatting of log-domain radiance into per-pixel values.

Compositing is front to back: contributions are alpha-weighted by the
transmittance accumulated in depth order, E(p) = sum_i L_i a_i prod_{j<i}
(1 - a_j). The per-pixel weights a_i * tau_i and the final transmittance
telescope to exactly 1, which the tests rely on.

Two implementations share every piece of per-Gaussian math:

  * render_irradiance walks 16x16 tiles with per-tile Gaussian lists and
    stops a pixel once its transmittance falls below the termination
    threshold. Tile lists are built from a conservative footprint box at
    which a Gaussian's alpha drops below BIN_ALPHA_FLOOR, so skipped
    pairs are individually negligible. Within a tile, Gaussians are
    consumed in depth-ordered chunks and the tile exits once every pixel
    has terminated; the skipped work consists only of pairs the
    termination mask would have zeroed anyway.
  * render_irradiance_reference composites every surviving Gaussian at
    every pixel with no tiling and no termination; it is the oracle the
    tiled path is tested against.

The backward pass applies the compositing adjoint: with w_i = a_i tau_i
and upstream u_i = <dE, L_i>, dL/da_i = u_i tau_i - (1/(1-a_i)) *
sum_{k>i} u_k w_k. It either recomputes forward intermediates or reuses
them from a RenderContext filled by the forward pass.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .geometry import (
    CULL_SIGMA,
    DILATION,
    NEAR_PLANE,
    Camera,
    GaussianCloud,
    NumericalDegeneracyError,
    as_cloud,
    project_cloud,
    project_cloud_backward,
)
from .tone_map import sigmoid_eval

BIN_ALPHA_FLOOR = 1e-8
CHUNK = 32

__all__ = [
    "RasterConfig",
    "IrradianceImage",
    "ContributionScores",
    "ParamGrads",
    "RenderContext",
    "render_irradiance",
    "render_irradiance_reference",
    "render_backward",
    "accumulate_contribution_scores",
]


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("HDRGS_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class RasterConfig:
    tile_size: int = 16
    termination: float = 1e-4
    alpha_clamp: float = 0.99
    near: float = NEAR_PLANE
    cull_sigma: float = CULL_SIGMA
    dilation: float = DILATION
    workers: int = field(default_factory=_default_workers)


@dataclass
class IrradianceImage:
    """Composited log-domain radiance plus transmittance diagnostics."""

    values: np.ndarray
    final_transmittance: np.ndarray
    weight_sum: np.ndarray


@dataclass
class ContributionScores:
    """Running per-Gaussian maximum of alpha * tau over pixels and views."""

    values: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "ContributionScores":
        return cls(np.zeros(n))

    def reset(self):
        self.values[:] = 0.0


@dataclass
class ParamGrads:
    """Gradients for every Gaussian parameter group."""

    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    radiance: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "ParamGrads":
        return cls(
            means=np.zeros((n, 3)),
            log_scales=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            opacity_logits=np.zeros(n),
            radiance=np.zeros((n, 3)),
        )


class _Prepared:
    """Depth-sorted screen-space quantities shared by forward and backward."""

    __slots__ = ("ids", "mean2d", "conic", "opacity", "radiance", "tile_lists",
                 "nx", "ny")

    def __init__(self, cloud: GaussianCloud, cam: Camera, cfg: RasterConfig):
        mean2d, cov2d, depth, keep = project_cloud(
            cloud, cam, near=cfg.near, cull_sigma=cfg.cull_sigma,
            dilation=cfg.dilation,
        )
        keep_ids = np.flatnonzero(keep)
        # stable sort keeps input order on equal depths
        order = np.argsort(depth[keep_ids], kind="stable")
        ids = keep_ids[order]
        self.ids = ids
        self.mean2d = mean2d[ids]
        cov = cov2d[ids]
        self.opacity = np.asarray(sigmoid_eval(cloud.opacity_logits[ids]))
        self.radiance = cloud.radiance[ids]

        a = cov[:, 0, 0]
        b = cov[:, 0, 1]
        c = cov[:, 1, 1]
        det = a * c - b * b
        if len(ids) and (not np.all(np.isfinite(det)) or np.any(det <= 0)):
            raise NumericalDegeneracyError("projected covariance not positive definite")
        self.conic = np.empty_like(cov)
        self.conic[:, 0, 0] = c / det
        self.conic[:, 0, 1] = -b / det
        self.conic[:, 1, 0] = -b / det
        self.conic[:, 1, 1] = a / det

        ts = cfg.tile_size
        self.nx = (cam.width + ts - 1) // ts
        self.ny = (cam.height + ts - 1) // ts
        n_live = len(ids)
        self.tile_lists: List[np.ndarray] = []
        if n_live == 0:
            self.tile_lists = [np.empty(0, dtype=np.int64)] * (self.nx * self.ny)
            return
        # box beyond which alpha < BIN_ALPHA_FLOOR; per-axis extent of the
        # level-set ellipse is sqrt(q_cut * Sigma_ii)
        q_cut = 2.0 * np.log(np.maximum(self.opacity, BIN_ALPHA_FLOOR) / BIN_ALPHA_FLOOR)
        q_cut = np.maximum(q_cut, 0.0)
        rx = np.sqrt(q_cut * a)
        ry = np.sqrt(q_cut * c)
        dead = self.opacity <= BIN_ALPHA_FLOOR
        rx[dead] = -1.0
        x0 = np.clip(np.floor((self.mean2d[:, 0] - rx) / ts).astype(np.int64), 0, self.nx - 1)
        x1 = np.clip(np.floor((self.mean2d[:, 0] + rx) / ts).astype(np.int64), 0, self.nx - 1)
        y0 = np.clip(np.floor((self.mean2d[:, 1] - ry) / ts).astype(np.int64), 0, self.ny - 1)
        y1 = np.clip(np.floor((self.mean2d[:, 1] + ry) / ts).astype(np.int64), 0, self.ny - 1)
        txg = np.arange(self.nx)
        tyg = np.arange(self.ny)
        in_x = (x0[None, :] <= txg[:, None]) & (txg[:, None] <= x1[None, :]) & ~dead[None, :]
        in_y = (y0[None, :] <= tyg[:, None]) & (tyg[:, None] <= y1[None, :])
        for ty in range(self.ny):
            for tx in range(self.nx):
                self.tile_lists.append(np.flatnonzero(in_x[tx] & in_y[ty]))


@dataclass
class RenderContext:
    """Optional carrier of forward intermediates for reuse by the backward
    pass. Valid only for the exact (scene, cam, cfg) it was filled with."""

    prep: Optional[_Prepared] = None
    tiles: Optional[list] = None


def _tile_bounds(cam: Camera, ts: int, tx: int, ty: int):
    return (tx * ts, min((tx + 1) * ts, cam.width),
            ty * ts, min((ty + 1) * ts, cam.height))


def _composite_tile(prep: _Prepared, cam: Camera, cfg: RasterConfig,
                    tx: int, ty: int):
    """Chunked alpha/transmittance stacks for one tile.

    Returns (chunks, t_final) or None for an empty tile. Each chunk is
    (k, dx, dy, q, raw, alpha, t_excl, include, w) with k indexing into
    prep arrays. Chunks stop once every pixel's transmittance is below
    the termination threshold; all skipped pairs would have include=0.
    """
    lst = prep.tile_lists[ty * prep.nx + tx]
    if lst.size == 0:
        return None
    x_lo, x_hi, y_lo, y_hi = _tile_bounds(cam, cfg.tile_size, tx, ty)
    xs = np.arange(x_lo, x_hi) + 0.5
    ys = np.arange(y_lo, y_hi) + 0.5
    px = np.tile(xs, y_hi - y_lo)[:, None]
    py = np.repeat(ys, x_hi - x_lo)[:, None]
    n_pix = px.shape[0]
    carry = np.ones(n_pix)
    t_final = np.ones(n_pix)
    chunks = []
    for s in range(0, lst.size, CHUNK):
        k = lst[s:s + CHUNK]
        dx = px - prep.mean2d[k, 0]
        dy = py - prep.mean2d[k, 1]
        q = prep.conic[k, 0, 0] * dx * dx
        q += 2.0 * prep.conic[k, 0, 1] * dx * dy
        q += prep.conic[k, 1, 1] * dy * dy
        raw = prep.opacity[k] * np.exp(-0.5 * q)
        alpha = np.minimum(raw, cfg.alpha_clamp)
        om = 1.0 - alpha
        cp = np.cumprod(om, axis=1)
        t_excl = np.empty_like(om)
        t_excl[:, 0] = carry
        if om.shape[1] > 1:
            t_excl[:, 1:] = carry[:, None] * cp[:, :-1]
        include = t_excl >= cfg.termination
        w = alpha * t_excl * include
        chunks.append((k, dx, dy, q, raw, alpha, t_excl, include, w))
        carry = carry * cp[:, -1]
        t_final *= np.prod(np.where(include, om, 1.0), axis=1)
        if np.all(carry < cfg.termination):
            break
    return chunks, t_final


def _tiles_of(prep: _Prepared):
    return [(tx, ty) for ty in range(prep.ny) for tx in range(prep.nx)]


def _run_tiles(fn, prep: _Prepared, cfg: RasterConfig):
    jobs = _tiles_of(prep)
    if cfg.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(lambda j: fn(*j), jobs))
    return [fn(*j) for j in jobs]


def _context_tiles(cloud: GaussianCloud, cam: Camera, cfg: RasterConfig,
                   context: Optional[RenderContext]):
    """Prepared state and per-tile composite stacks, via context if primed."""
    if context is not None and context.prep is not None:
        return context.prep, context.tiles
    prep = _Prepared(cloud, cam, cfg)
    tiles = _run_tiles(lambda tx, ty: _composite_tile(prep, cam, cfg, tx, ty),
                       prep, cfg)
    if context is not None:
        context.prep = prep
        context.tiles = tiles
    return prep, tiles


def render_irradiance(scene, cam: Camera, cfg: Optional[RasterConfig] = None,
                      scores: Optional[ContributionScores] = None,
                      context: Optional[RenderContext] = None) -> IrradianceImage:
    """Tiled forward render; optionally folds contributions into scores."""
    cfg = cfg or RasterConfig()
    cloud = as_cloud(scene)
    if scores is not None and scores.values.shape[0] != cloud.n:
        raise ValueError("scores array does not match scene size")
    h, wdt = cam.height, cam.width
    values = np.zeros((h, wdt, 3))
    t_final = np.ones((h, wdt))
    wsum = np.zeros((h, wdt))
    if cloud.n == 0:
        return IrradianceImage(values, t_final, wsum)
    prep, tiles = _context_tiles(cloud, cam, cfg, context)
    for (tx, ty), tile in zip(_tiles_of(prep), tiles):
        if tile is None:
            continue
        chunks, tf = tile
        x_lo, x_hi, y_lo, y_hi = _tile_bounds(cam, cfg.tile_size, tx, ty)
        th, tw = y_hi - y_lo, x_hi - x_lo
        acc = np.zeros((th * tw, 3))
        ws = np.zeros(th * tw)
        for k, _, _, _, _, _, _, _, w in chunks:
            acc += w @ prep.radiance[k]
            ws += w.sum(axis=1)
            if scores is not None:
                ids = prep.ids[k]
                scores.values[ids] = np.maximum(scores.values[ids], w.max(axis=0))
        values[y_lo:y_hi, x_lo:x_hi] = acc.reshape(th, tw, 3)
        t_final[y_lo:y_hi, x_lo:x_hi] = tf.reshape(th, tw)
        wsum[y_lo:y_hi, x_lo:x_hi] = ws.reshape(th, tw)
    return IrradianceImage(values, t_final, wsum)


def render_irradiance_reference(scene, cam: Camera,
                                cfg: Optional[RasterConfig] = None) -> IrradianceImage:
    """Brute-force oracle: every Gaussian at every pixel, no termination."""
    cfg = cfg or RasterConfig()
    cloud = as_cloud(scene)
    h, wdt = cam.height, cam.width
    if cloud.n == 0:
        return IrradianceImage(np.zeros((h, wdt, 3)), np.ones((h, wdt)), np.zeros((h, wdt)))
    mean2d, cov2d, depth, keep = project_cloud(
        cloud, cam, near=cfg.near, cull_sigma=cfg.cull_sigma, dilation=cfg.dilation
    )
    ids = np.flatnonzero(keep)
    ids = ids[np.argsort(depth[ids], kind="stable")]
    if len(ids) == 0:
        return IrradianceImage(np.zeros((h, wdt, 3)), np.ones((h, wdt)), np.zeros((h, wdt)))
    opac = np.asarray(sigmoid_eval(cloud.opacity_logits[ids]))
    rad = cloud.radiance[ids]
    a = cov2d[ids, 0, 0]
    b = cov2d[ids, 0, 1]
    c = cov2d[ids, 1, 1]
    det = a * c - b * b
    if not np.all(np.isfinite(det)) or np.any(det <= 0):
        raise NumericalDegeneracyError("projected covariance not positive definite")
    ia, ib, ic = c / det, -b / det, a / det

    xs = np.arange(wdt) + 0.5
    ys = np.arange(h) + 0.5
    px, py = np.meshgrid(xs, ys)
    dx = px.ravel()[:, None] - mean2d[ids, 0][None, :]
    dy = py.ravel()[:, None] - mean2d[ids, 1][None, :]
    q = ia[None, :] * dx * dx + 2.0 * ib[None, :] * dx * dy + ic[None, :] * dy * dy
    alpha = np.minimum(opac[None, :] * np.exp(-0.5 * q), cfg.alpha_clamp)
    t_excl = np.cumprod(1.0 - alpha, axis=1)
    t_final = t_excl[:, -1].reshape(h, wdt)
    t_excl = np.concatenate([np.ones((alpha.shape[0], 1)), t_excl[:, :-1]], axis=1)
    w = alpha * t_excl
    values = (w @ rad).reshape(h, wdt, 3)
    return IrradianceImage(values, t_final, w.sum(axis=1).reshape(h, wdt))


def accumulate_contribution_scores(scene, cam: Camera, scores: ContributionScores,
                                   cfg: Optional[RasterConfig] = None) -> ContributionScores:
    """Update scores with this view's per-Gaussian maximum contribution."""
    render_irradiance(scene, cam, cfg, scores=scores)
    return scores


def render_backward(scene, cam: Camera, grad_values: np.ndarray,
                    cfg: Optional[RasterConfig] = None,
                    context: Optional[RenderContext] = None) -> ParamGrads:
    """Gradients of sum(grad_values * rendered values) for all parameters."""
    cfg = cfg or RasterConfig()
    cloud = as_cloud(scene)
    grad_values = np.asarray(grad_values, dtype=np.float64)
    if grad_values.shape != (cam.height, cam.width, 3):
        raise ValueError(
            f"grad_values must have shape {(cam.height, cam.width, 3)}, "
            f"got {grad_values.shape}"
        )
    grads = ParamGrads.zeros(cloud.n)
    if cloud.n == 0:
        return grads
    prep, tiles = _context_tiles(cloud, cam, cfg, context)
    n_live = len(prep.ids)
    if n_live == 0:
        return grads
    d_mean2d = np.zeros((n_live, 2))
    d_conic = np.zeros((n_live, 2, 2))
    d_opacity = np.zeros(n_live)
    d_radiance = np.zeros((n_live, 3))

    for (tx, ty), tile in zip(_tiles_of(prep), tiles):
        if tile is None:
            continue
        chunks, _ = tile
        x_lo, x_hi, y_lo, y_hi = _tile_bounds(cam, cfg.tile_size, tx, ty)
        dE = grad_values[y_lo:y_hi, x_lo:x_hi].reshape(-1, 3)
        g_later = np.zeros(dE.shape[0])
        # reverse chunk order so the occlusion term can carry across chunks
        for k, dx, dy, q, raw, alpha, t_excl, include, w in reversed(chunks):
            u = dE @ prep.radiance[k].T
            g = u * w
            suffix = np.cumsum(g[:, ::-1], axis=1)[:, ::-1] - g + g_later[:, None]
            g_later = g_later + g.sum(axis=1)
            d_alpha = u * t_excl * include - suffix / (1.0 - alpha)
            d_alpha *= raw < cfg.alpha_clamp
            d_op = d_alpha * np.exp(-0.5 * q)
            d_q = -0.5 * alpha * d_alpha

            ia = prep.conic[k, 0, 0]
            ib = prep.conic[k, 0, 1]
            ic = prep.conic[k, 1, 1]
            d_radiance[k] += w.T @ dE
            d_opacity[k] += d_op.sum(axis=0)
            d_mean2d[k, 0] += np.sum(d_q * (-2.0) * (ia * dx + ib * dy), axis=0)
            d_mean2d[k, 1] += np.sum(d_q * (-2.0) * (ib * dx + ic * dy), axis=0)
            d_conic[k, 0, 0] += np.sum(d_q * dx * dx, axis=0)
            off = np.sum(d_q * dx * dy, axis=0)
            d_conic[k, 0, 1] += off
            d_conic[k, 1, 0] += off
            d_conic[k, 1, 1] += np.sum(d_q * dy * dy, axis=0)

    # conic = inv(cov2d): dL/dcov = -inv @ dL/dconic @ inv
    d_cov2d = -prep.conic @ d_conic @ prep.conic
    sig = prep.opacity
    d_logit_live = d_opacity * sig * (1.0 - sig)

    full_d_mean2d = np.zeros((cloud.n, 2))
    full_d_cov2d = np.zeros((cloud.n, 2, 2))
    keep = np.zeros(cloud.n, dtype=bool)
    full_d_mean2d[prep.ids] = d_mean2d
    full_d_cov2d[prep.ids] = d_cov2d
    keep[prep.ids] = True
    d_means, d_log_scales, d_rotations = project_cloud_backward(
        cloud, cam, full_d_mean2d, full_d_cov2d, keep, near=cfg.near
    )
    grads.means = d_means
    grads.log_scales = d_log_scales
    grads.rotations = d_rotations
    grads.opacity_logits[prep.ids] = d_logit_live
    grads.radiance[prep.ids] = d_radiance
    return grads
