"""Command-line surface: generate / train / render / eval / export-crf.

Config resolution is layered: dataclass defaults, then a JSON config
file, then explicit flags, with unknown keys rejected. Every scalar
field of the training and scene configs is addressable as a flag, so
shell scripts can drive ablations without writing config files.

Exit codes: 0 success, 2 usage or input error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional

import numpy as np
from PIL import Image

from .checkpoint import (
    CheckpointFormatError,
    ModelCheckpoint,
    load_checkpoint,
    save_checkpoint,
)
from .dataset import DatasetError, MultiExposureDataset, load_dataset, save_dataset
from .exposure import hdr_from_learned, scale_time
from .geometry import Camera, NumericalDegeneracyError
from .losses import LossConfig, hdr_log_rmse, psnr, ssim
from .pfm import PfmFormatError, write_pfm
from .rasterizer import RasterConfig, render_irradiance
from .synthetic import SceneSpec, generate_synthetic
from .tone_map import GridConfig
from .trainer import NonFiniteLossError, TrainConfig, render_ldr, train

USAGE_ERROR = 2
NUMERIC_ERROR = 3


class CliError(Exception):
    """Bad invocation or bad input; maps to exit code 2."""


_EXTRA_FLAG_TYPES = {
    "workers": int,
    "gain": float,
    "lr_scales_final": float,
    "lr_rotations_final": float,
    "lr_opacities_final": float,
    "lr_radiance_final": float,
}


def _scalar_fields(cls):
    for f in dataclasses.fields(cls):
        if f.name in _EXTRA_FLAG_TYPES:
            yield f, _EXTRA_FLAG_TYPES[f.name]
        elif isinstance(f.default, bool):
            continue
        elif isinstance(f.default, int):
            yield f, int
        elif isinstance(f.default, float):
            yield f, float


def _add_config_flags(parser, cls, prefix: str = "") -> None:
    for f, typ in _scalar_fields(cls):
        flag = "--" + (prefix + f.name).replace("_", "-")
        dest = "cfg_" + prefix.replace("-", "_") + f.name
        parser.add_argument(flag, type=typ, dest=dest,
                            default=argparse.SUPPRESS, help=argparse.SUPPRESS)


def _flag_overrides(args, cls, prefix: str = "") -> dict:
    out = {}
    pre = "cfg_" + prefix.replace("-", "_")
    names = {f.name for f in dataclasses.fields(cls)}
    for key, val in vars(args).items():
        if key.startswith(pre) and key[len(pre):] in names:
            out[key[len(pre):]] = val
    return out


def _check_keys(given: dict, cls, where: str) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(given) - known)
    if unknown:
        raise CliError(f"unknown config keys in {where}: {', '.join(unknown)}")


def _load_json(path, what: str) -> dict:
    if not os.path.exists(path):
        raise CliError(f"missing {what} file: {path}")
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"{what} file must hold a JSON object: {path}")
    return data


def _resolve_train_config(args) -> TrainConfig:
    flat: dict = {}
    nested = {"grid": {}, "loss": {}, "raster": {}}
    sub_cls = {"grid": GridConfig, "loss": LossConfig, "raster": RasterConfig}

    if getattr(args, "config", None):
        file_cfg = _load_json(args.config, "config")
        for name, sub in nested.items():
            section = file_cfg.pop(name, {})
            if not isinstance(section, dict):
                raise CliError(f"config section {name!r} must be an object")
            _check_keys(section, sub_cls[name], f"config section {name!r}")
            sub.update(section)
        _check_keys(file_cfg, TrainConfig, "config file")
        flat.update(file_cfg)

    flat.update(_flag_overrides(args, TrainConfig))
    for name, sub in nested.items():
        sub.update(_flag_overrides(args, sub_cls[name], prefix=name + "_"))

    if getattr(args, "no_coarse", False):
        flat["use_coarse"] = False
    if getattr(args, "no_time_scaling", False):
        flat["time_scaling"] = False
    if getattr(args, "densify", False):
        flat["densify_enabled"] = True
    grid_kwargs = dict(nested["grid"])
    if getattr(args, "symmetric_grid", False):
        base = GridConfig(**grid_kwargs)
        grid_kwargs["sparse_density"] = base.dense_density

    return TrainConfig(grid=GridConfig(**grid_kwargs),
                       loss=LossConfig(**nested["loss"]),
                       raster=RasterConfig(**nested["raster"]),
                       **flat)


def _resolve_scene_spec(args) -> SceneSpec:
    merged: dict = {}
    if getattr(args, "spec", None):
        file_spec = _load_json(args.spec, "spec")
        _check_keys(file_spec, SceneSpec, "spec file")
        merged.update(file_spec)
    merged.update(_flag_overrides(args, SceneSpec))
    if getattr(args, "exposure_times", None):
        try:
            merged["exposure_times"] = tuple(
                float(t) for t in args.exposure_times.split(","))
        except ValueError as exc:
            raise CliError(f"bad --exposure-times: {exc}") from exc
    elif "exposure_times" in merged:
        merged["exposure_times"] = tuple(merged["exposure_times"])
    return SceneSpec(**merged)


def _dump(cfg) -> int:
    print(json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True))
    return 0


def cmd_generate(args) -> int:
    spec = _resolve_scene_spec(args)
    if args.dump_config:
        return _dump(spec)
    if not args.out:
        raise CliError("--out is required")
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise CliError(f"output directory {args.out} is not empty "
                       "(use --force to overwrite)")
    ds = generate_synthetic(spec)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: {spec.n_views} views x "
          f"{len(spec.exposure_times)} exposures = {len(ds.records)} images "
          f"({ds.width}x{ds.height}), {spec.n_gaussians} gaussians, "
          f"{len(ds.init_points)} init points")
    return 0


def _exposure_levels(args, ds: MultiExposureDataset) -> Optional[list]:
    if args.ldr_oe and args.ldr_ne:
        raise CliError("--ldr-oe and --ldr-ne are mutually exclusive")
    if not (args.ldr_oe or args.ldr_ne):
        return None
    levels = [0, 2, 4] if args.ldr_oe else [1, 3]
    if max(levels) >= len(ds.exposure_times):
        raise CliError(
            f"dataset has {len(ds.exposure_times)} exposure levels, "
            f"need {max(levels) + 1} for this split")
    return levels


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    if args.dump_config:
        return _dump(cfg)
    if not args.data or not args.out:
        raise CliError("--data and --out are required")
    ds = load_dataset(args.data)
    levels = _exposure_levels(args, ds)
    data = ds.to_train_data("train", exposure_levels=levels)
    log_path = args.log or args.out + ".log.csv"
    ckpt = train(data, cfg, log_path=log_path, checkpoint_path=args.out)
    print(f"trained {ckpt.iteration} iterations "
          f"({len(ckpt.cloud.opacity_logits)} gaussians), "
          f"checkpoint {args.out}, log {log_path}")
    return 0


def _camera_from_pose(args, needs_exposure: bool) -> Camera:
    t = args.exposure if args.exposure is not None else 1.0
    if needs_exposure and (args.exposure is None or args.exposure <= 0):
        raise CliError("--exposure must be a positive time")
    try:
        view = int(args.pose)
    except ValueError:
        view = None
    if view is not None:
        if not args.data:
            raise CliError("--pose by view index needs --data for the camera rig")
        ds = load_dataset(args.data)
        recs = [r for r in ds.records if r.view == view]
        if not recs:
            raise CliError(f"view {view} not present in {args.data}")
        c = recs[0].camera
        return Camera(fx=c.fx, fy=c.fy, cx=c.cx, cy=c.cy, width=c.width,
                      height=c.height, world_to_camera=c.world_to_camera.copy(),
                      exposure_time=t)
    pose = _load_json(args.pose, "pose")
    try:
        return Camera(fx=float(pose["fx"]), fy=float(pose["fy"]),
                      cx=float(pose["cx"]), cy=float(pose["cy"]),
                      width=int(pose["width"]), height=int(pose["height"]),
                      world_to_camera=np.array(pose["world_to_camera"],
                                               dtype=np.float64),
                      exposure_time=t)
    except KeyError as exc:
        raise CliError(f"pose file {args.pose} missing key {exc}") from exc


def _write_png(img01: np.ndarray, path) -> None:
    u8 = np.round(np.clip(img01, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8, "RGB").save(path)


def cmd_render(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cam = _camera_from_pose(args, needs_exposure=not (args.hdr or args.preview))
    if args.hdr or args.preview:
        values = render_irradiance(ckpt.cloud, cam, RasterConfig()).values
        hdr = hdr_from_learned(values, ckpt.scaler)
        if args.hdr:
            write_pfm(hdr.astype(np.float32), args.out)
        else:
            # fixed Reinhard-style display transform for quick inspection
            _write_png((hdr / (1.0 + hdr)) ** (1.0 / 2.2), args.out)
    else:
        ldr = render_ldr(ckpt.cloud, cam, ckpt.scaler, ckpt.grid)
        _write_png(ldr, args.out)
    print(f"wrote {args.out}")
    return 0


def _format_row(cells) -> str:
    return ",".join("" if c is None else
                    (c if isinstance(c, str) else f"{c:.6f}") for c in cells)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    raster = RasterConfig()
    hdr_by_view: dict = {}
    for view, gt in ds.gt_hdr.items():
        cam = next(r.camera for r in ds.records if r.view == view)
        values = render_irradiance(ckpt.cloud, cam, raster).values
        pred = hdr_from_learned(values, ckpt.scaler)
        rmse, _ = hdr_log_rmse(pred, gt.astype(np.float64))
        hdr_by_view[view] = rmse

    rows = []
    sums: dict = {}
    for rec in ds.records:
        target = rec.pixels.astype(np.float64) / 255.0
        pred = np.clip(render_ldr(ckpt.cloud, rec.camera, ckpt.scaler,
                                  ckpt.grid), 0.0, 1.0)
        p = psnr(pred, target)
        s = ssim(pred, target)
        rows.append([str(rec.view), str(rec.exposure_level), rec.split,
                     p, s, hdr_by_view.get(rec.view)])
        acc = sums.setdefault(rec.split, [0.0, 0.0, 0])
        acc[0] += p
        acc[1] += s
        acc[2] += 1

    lines = ["view,exposure_level,split,psnr,ssim,hdr_log_rmse"]
    lines += [_format_row(r) for r in rows]
    for split in sorted(sums):
        p, s, n = sums[split]
        vals = [v for k, v in hdr_by_view.items()
                if any(r.view == k and r.split == split for r in ds.records)]
        mean_rmse = float(np.mean(vals)) if vals else None
        lines.append(_format_row(["mean", "", split, p / n, s / n, mean_rmse]))
        print(f"{split}: psnr {p / n:.3f} ssim {s / n:.4f}"
              + (f" hdr_log_rmse {mean_rmse:.4f}" if mean_rmse is not None else ""))
    with open(args.out, "w") as f:
        f.write("\n".join(lines) + "\n")
    return 0


def _parse_range(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise CliError("--range must be lo:hi:step")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError as exc:
        raise CliError(f"bad --range: {exc}") from exc
    if step <= 0 or hi <= lo:
        raise CliError("--range needs hi > lo and step > 0")
    n = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(n)


def cmd_export_crf(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.grid is None:
        raise CliError("checkpoint has no tone curve grid "
                       "(coarse phase only); train through the fine phase")
    xs = _parse_range(args.range)
    cols = [ckpt.grid.eval_channel(xs, c) for c in range(3)]
    lines = ["x,g_red,g_green,g_blue"]
    lines += [f"{x:.10g},{r:.10g},{g:.10g},{b:.10g}"
              for x, r, g, b in zip(xs, *cols)]
    with open(args.out, "w") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {args.out}: {len(xs)} rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdrsplat",
        description="HDR radiance field reconstruction from multi-exposure "
                    "LDR images via differentiable Gaussian splatting.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a procedural multi-exposure dataset")
    g.add_argument("--spec", help="JSON file of scene spec overrides")
    g.add_argument("--out", help="output dataset directory")
    g.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    g.add_argument("--exposure-times", help="comma-separated shutter times")
    g.add_argument("--dump-config", action="store_true",
                   help="print the resolved scene spec and exit")
    _add_config_flags(g, SceneSpec)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit the model to a dataset")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--out", help="output checkpoint path")
    t.add_argument("--log", help="per-iteration CSV log path "
                                 "(default: <out>.log.csv)")
    t.add_argument("--config", help="JSON file of config overrides")
    t.add_argument("--ldr-oe", action="store_true",
                   help="restrict training to exposure levels 0,2,4")
    t.add_argument("--ldr-ne", action="store_true",
                   help="restrict training to exposure levels 1,3")
    t.add_argument("--no-coarse", action="store_true",
                   help="skip the sigmoid warmup phase")
    t.add_argument("--no-time-scaling", action="store_true",
                   help="fix the shutter-time transform to identity")
    t.add_argument("--symmetric-grid", action="store_true",
                   help="use the dense node density on both grid regions")
    t.add_argument("--densify", action="store_true",
                   help="enable gradient-driven cloning")
    t.add_argument("--dump-config", action="store_true",
                   help="print the resolved train config and exit")
    _add_config_flags(t, TrainConfig)
    _add_config_flags(t, GridConfig, prefix="grid-")
    _add_config_flags(t, LossConfig, prefix="loss-")
    _add_config_flags(t, RasterConfig, prefix="raster-")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render a checkpoint from a pose")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--pose", required=True,
                   help="view index (with --data) or JSON camera file")
    r.add_argument("--data", help="dataset directory supplying the camera rig")
    r.add_argument("--exposure", type=float,
                   help="shutter time for LDR rendering")
    r.add_argument("--out", required=True)
    mode = r.add_mutually_exclusive_group()
    mode.add_argument("--hdr", action="store_true",
                      help="write linear radiance as PFM (ignores --exposure)")
    mode.add_argument("--preview", action="store_true",
                      help="write a Reinhard tone-mapped PNG of the radiance")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="score a checkpoint against a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="metrics CSV path")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-crf", help="sample the learned tone curve to CSV")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--range", default="-6:3:0.01", help="lo:hi:step sample grid")
    x.set_defaults(func=cmd_export_crf)
    return parser


def entry(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except NumericalDegeneracyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (CliError, DatasetError, CheckpointFormatError, PfmFormatError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


def main(argv=None) -> None:
    sys.exit(entry(argv))


if __name__ == "__main__":
    main()
