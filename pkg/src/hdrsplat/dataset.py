"""Multi-exposure dataset schema and directory I/O.

A dataset directory holds `meta.json` (version, per-view poses and
intrinsics, exposure times, split tags, optional scene bounds, init
points, and ground-truth pointers), 8-bit LDR images under `ldr/`,
optional HDR ground truth under `hdr/` as PFM, and an optional sampled
ground-truth tone curve `crf.csv`. Loading is fail-closed: any schema,
file, or dimension problem raises a specific error before partial data
escapes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .exposure import ev_to_seconds
from .geometry import Camera
from .pfm import PfmFormatError, read_pfm, write_pfm
from .trainer import TrainData, TrainSample

SCHEMA_VERSION = 1

__all__ = [
    "DatasetError",
    "MissingFileError",
    "SchemaVersionError",
    "DimensionMismatchError",
    "ImageDecodeError",
    "ImageRecord",
    "MultiExposureDataset",
    "save_dataset",
    "load_dataset",
]


class DatasetError(ValueError):
    """Base class for dataset problems."""


class MissingFileError(DatasetError):
    pass


class SchemaVersionError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class ImageDecodeError(DatasetError):
    pass


@dataclass
class ImageRecord:
    """One LDR capture: a posed camera with its exposure time and pixels."""

    view: int
    exposure_level: int
    split: str
    camera: Camera
    pixels: np.ndarray

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise DatasetError(f"unknown split tag {self.split!r}")
        self.pixels = np.asarray(self.pixels)
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 \
                or self.pixels.shape[2] != 3:
            raise DatasetError("LDR pixels must be HxWx3 uint8")


@dataclass
class MultiExposureDataset:
    records: List[ImageRecord]
    exposure_times: List[float]
    exposure_unit: str = "seconds"
    gt_hdr: Dict[int, np.ndarray] = field(default_factory=dict)
    gt_crf: Optional[np.ndarray] = None
    init_points: Optional[np.ndarray] = None
    scene_bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        if not self.records:
            raise DatasetError("dataset has no images")
        h, w = self.records[0].pixels.shape[:2]
        for rec in self.records:
            if rec.pixels.shape[:2] != (h, w):
                raise DimensionMismatchError(
                    f"image for view {rec.view} level {rec.exposure_level} is "
                    f"{rec.pixels.shape[:2]}, expected {(h, w)}"
                )
        for view, hdr in self.gt_hdr.items():
            if hdr.shape[:2] != (h, w):
                raise DimensionMismatchError(
                    f"gt hdr for view {view} is {hdr.shape[:2]}, expected {(h, w)}"
                )
        train_times = {self.exposure_times[r.exposure_level]
                       for r in self.records if r.split == "train"}
        if len(train_times) < 2:
            raise DatasetError("train split needs at least 2 distinct exposure times")

    @property
    def height(self) -> int:
        return self.records[0].pixels.shape[0]

    @property
    def width(self) -> int:
        return self.records[0].pixels.shape[1]

    def time_seconds(self, level: int) -> float:
        t = self.exposure_times[level]
        return float(ev_to_seconds(t)) if self.exposure_unit == "ev" else float(t)

    def select(self, split: Optional[str] = None,
               exposure_levels: Optional[Sequence[int]] = None) -> List[ImageRecord]:
        out = []
        for rec in self.records:
            if split is not None and rec.split != split:
                continue
            if exposure_levels is not None and rec.exposure_level not in exposure_levels:
                continue
            out.append(rec)
        return out

    def to_train_data(self, split: str = "train",
                      exposure_levels: Optional[Sequence[int]] = None) -> TrainData:
        samples = [
            TrainSample(camera=rec.camera,
                        image=rec.pixels.astype(np.float64) / 255.0,
                        view=rec.view, exposure_level=rec.exposure_level)
            for rec in self.select(split, exposure_levels)
        ]
        pts = None
        if self.init_points is not None:
            pts = np.asarray(self.init_points, dtype=np.float64)[:, :3]
        return TrainData(samples=samples, init_points=pts,
                         scene_bounds=self.scene_bounds)


def _camera_meta(cam: Camera) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "world_to_camera": cam.world_to_camera.tolist(),
    }


def save_dataset(ds: MultiExposureDataset, path) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.join(path, "ldr"), exist_ok=True)
    if ds.gt_hdr:
        os.makedirs(os.path.join(path, "hdr"), exist_ok=True)

    view_cams: Dict[int, Camera] = {}
    images_meta = []
    for rec in ds.records:
        view_cams.setdefault(rec.view, rec.camera)
        fname = f"ldr/v{rec.view:03d}_e{rec.exposure_level}.png"
        Image.fromarray(rec.pixels, "RGB").save(os.path.join(path, fname))
        images_meta.append({
            "view": rec.view, "exposure_level": rec.exposure_level,
            "split": rec.split, "file": fname,
        })

    hdr_meta = {}
    for view, hdr in sorted(ds.gt_hdr.items()):
        fname = f"hdr/v{view:03d}.pfm"
        write_pfm(hdr, os.path.join(path, fname))
        hdr_meta[str(view)] = fname

    meta = {
        "version": SCHEMA_VERSION,
        "exposure_unit": ds.exposure_unit,
        "exposure_times": list(map(float, ds.exposure_times)),
        "width": ds.width,
        "height": ds.height,
        "cameras": {str(v): _camera_meta(c) for v, c in sorted(view_cams.items())},
        "images": images_meta,
    }
    if hdr_meta:
        meta["hdr"] = hdr_meta
    if ds.scene_bounds is not None:
        lo, hi = ds.scene_bounds
        meta["scene_bounds"] = {"lo": np.asarray(lo).tolist(),
                                "hi": np.asarray(hi).tolist()}
    if ds.init_points is not None:
        meta["init_points"] = np.asarray(ds.init_points).tolist()
    if ds.gt_crf is not None:
        rows = ["x,g_red,g_green,g_blue"]
        rows += [f"{x:.17g},{r:.17g},{g:.17g},{b:.17g}" for x, r, g, b in ds.gt_crf]
        with open(os.path.join(path, "crf.csv"), "w") as f:
            f.write("\n".join(rows) + "\n")
        meta["crf_file"] = "crf.csv"

    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_png(path_full: str, rel: str) -> np.ndarray:
    if not os.path.exists(path_full):
        raise MissingFileError(f"missing image file {rel}")
    try:
        with Image.open(path_full) as img:
            img.load()
            if img.mode != "RGB":
                img = img.convert("RGB")
            return np.asarray(img, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode image {rel}: {exc}") from exc


def load_dataset(path) -> MultiExposureDataset:
    path = os.fspath(path)
    meta_path = os.path.join(path, "meta.json")
    if not os.path.exists(meta_path):
        raise MissingFileError(f"missing meta.json in {path}")
    try:
        with open(meta_path) as f:
            meta = json.load(f)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed meta.json: {exc}") from exc
    version = meta.get("version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported dataset schema version {version!r}, expected {SCHEMA_VERSION}"
        )
    try:
        times = [float(t) for t in meta["exposure_times"]]
        unit = meta.get("exposure_unit", "seconds")
        width = int(meta["width"])
        height = int(meta["height"])
        cameras_meta = meta["cameras"]
        images_meta = meta["images"]
    except KeyError as exc:
        raise DatasetError(f"meta.json missing required key {exc}") from exc

    records = []
    for im in images_meta:
        view = int(im["view"])
        level = int(im["exposure_level"])
        cam_meta = cameras_meta[str(view)]
        t = times[level]
        if unit == "ev":
            t = float(ev_to_seconds(t))
        cam = Camera(
            fx=float(cam_meta["fx"]), fy=float(cam_meta["fy"]),
            cx=float(cam_meta["cx"]), cy=float(cam_meta["cy"]),
            width=width, height=height,
            world_to_camera=np.array(cam_meta["world_to_camera"], dtype=np.float64),
            exposure_time=t,
        )
        pixels = _load_png(os.path.join(path, im["file"]), im["file"])
        if pixels.shape[:2] != (height, width):
            raise DimensionMismatchError(
                f"{im['file']} is {pixels.shape[:2]}, meta says {(height, width)}"
            )
        records.append(ImageRecord(view=view, exposure_level=level,
                                   split=im["split"], camera=cam, pixels=pixels))

    gt_hdr = {}
    for view_str, rel in meta.get("hdr", {}).items():
        full = os.path.join(path, rel)
        if not os.path.exists(full):
            raise MissingFileError(f"missing hdr file {rel}")
        try:
            gt_hdr[int(view_str)] = read_pfm(full)
        except PfmFormatError as exc:
            raise ImageDecodeError(f"cannot decode {rel}: {exc}") from exc

    gt_crf = None
    if "crf_file" in meta:
        full = os.path.join(path, meta["crf_file"])
        if not os.path.exists(full):
            raise MissingFileError(f"missing crf file {meta['crf_file']}")
        gt_crf = np.loadtxt(full, delimiter=",", skiprows=1, dtype=np.float64)
        gt_crf = np.atleast_2d(gt_crf)

    bounds = None
    if "scene_bounds" in meta:
        bounds = (np.array(meta["scene_bounds"]["lo"], dtype=np.float64),
                  np.array(meta["scene_bounds"]["hi"], dtype=np.float64))
    init_points = None
    if "init_points" in meta:
        init_points = np.array(meta["init_points"], dtype=np.float64)

    return MultiExposureDataset(
        records=records, exposure_times=times, exposure_unit=unit,
        gt_hdr=gt_hdr, gt_crf=gt_crf, init_points=init_points,
        scene_bounds=bounds,
    )
