"""Versioned binary container for trained models.

Layout: 7 magic bytes, then four length-prefixed sections in fixed
order (Gaussians, tone grid, exposure scaler, JSON metadata). Every
integer and float is little-endian; lengths are u64. A coarse-phase
model stores an empty grid section. Writes are atomic: the file is
written to a temporary sibling and renamed into place, so a crash never
leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exposure import ExposureScaler
from .geometry import GaussianCloud
from .tone_map import AsymmetricGrid

MAGIC = b"HDRGS1\0"

__all__ = ["ModelCheckpoint", "CheckpointFormatError", "save_checkpoint", "load_checkpoint"]


class CheckpointFormatError(ValueError):
    """Malformed or truncated checkpoint file."""


@dataclass
class ModelCheckpoint:
    cloud: GaussianCloud
    grid: Optional[AsymmetricGrid]
    scaler: ExposureScaler
    phase: str
    iteration: int
    config_hash: str


def _f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _pack_gaussians(cloud: GaussianCloud) -> bytes:
    return (struct.pack("<Q", cloud.n)
            + _f64(cloud.means) + _f64(cloud.log_scales) + _f64(cloud.rotations)
            + _f64(cloud.opacity_logits) + _f64(cloud.radiance))


def _unpack_gaussians(buf: bytes) -> GaussianCloud:
    (n,) = struct.unpack_from("<Q", buf, 0)
    off = 8
    sizes = [(n, 3), (n, 3), (n, 4), (n,), (n, 3)]
    arrays = []
    for shape in sizes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(buf, "<f8", count, off).reshape(shape).copy())
        off += count * 8
    if off != len(buf):
        raise CheckpointFormatError("gaussian section length mismatch")
    return GaussianCloud(*arrays)


def _pack_grid(grid: Optional[AsymmetricGrid]) -> bytes:
    if grid is None:
        return b""
    head = struct.pack("<dddIId", grid.x_lo, grid.x_mid, grid.x_hi,
                       grid.dense_density, grid.sparse_density, grid.leak_beta)
    return head + struct.pack("<Q", grid.n_nodes) + _f64(grid.node_values)


def _unpack_grid(buf: bytes) -> Optional[AsymmetricGrid]:
    if not buf:
        return None
    x_lo, x_mid, x_hi, dd, sd, beta = struct.unpack_from("<dddIId", buf, 0)
    off = struct.calcsize("<dddIId")
    (n,) = struct.unpack_from("<Q", buf, off)
    off += 8
    values = np.frombuffer(buf, "<f8", 3 * n, off).reshape(3, n).copy()
    if off + 24 * n != len(buf):
        raise CheckpointFormatError("grid section length mismatch")
    return AsymmetricGrid(x_lo, x_mid, x_hi, dd, sd, beta, values)


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    meta = json.dumps(
        {"version": 1, "phase": ckpt.phase, "iteration": ckpt.iteration,
         "config_hash": ckpt.config_hash},
        sort_keys=True,
    ).encode("utf-8")
    sections = [
        _pack_gaussians(ckpt.cloud),
        _pack_grid(ckpt.grid),
        struct.pack("<dd", ckpt.scaler.r, ckpt.scaler.s),
        meta,
    ]
    blob = MAGIC + b"".join(struct.pack("<Q", len(s)) + s for s in sections)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("bad magic bytes")
    off = len(MAGIC)
    sections = []
    for _ in range(4):
        if off + 8 > len(blob):
            raise CheckpointFormatError("truncated section header")
        (length,) = struct.unpack_from("<Q", blob, off)
        off += 8
        if off + length > len(blob):
            raise CheckpointFormatError("truncated section payload")
        sections.append(blob[off:off + length])
        off += length
    if off != len(blob):
        raise CheckpointFormatError("trailing bytes after last section")
    cloud = _unpack_gaussians(sections[0])
    grid = _unpack_grid(sections[1])
    r, s = struct.unpack("<dd", sections[2])
    meta = json.loads(sections[3].decode("utf-8"))
    if meta.get("version") != 1:
        raise CheckpointFormatError(f"unsupported checkpoint version {meta.get('version')}")
    return ModelCheckpoint(
        cloud=cloud, grid=grid, scaler=ExposureScaler(r, s),
        phase=meta["phase"], iteration=int(meta["iteration"]),
        config_hash=meta["config_hash"],
    )
