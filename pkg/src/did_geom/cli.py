"""Command line entry point: ``did-geom <subcommand> ...``.

Subcommands: synth, gen-labels, augment, fuse, eval, gradcheck. Every run
writes a ``manifest.json`` next to its outputs. Exit status is 0 on
success, 1 on validation errors and 2 on I/O errors. The log level comes
from ``DID_GEOM_LOG`` (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, kitti_io
from .augmentation import augment_frame, horizontal_flip, make_crop_scale
from .bundle import Frame, dumps, read_frame, write_frame
from .depth_fusion import (
    InstancePatch,
    aggregate_depth,
    final_score,
    gradcheck,
    instance_confidence,
)
from .depth_labels import generate_labels
from .errors import DidGeomError, UnknownSubcommand
from .evaluation import EvalConfig, evaluate
from .geometry import alpha_to_ry, recover_location
from .synth import SceneConfig, generate_scene, noisy_patch, perfect_detections

logger = logging.getLogger("did_geom")

SUBCOMMANDS = ("synth", "gen-labels", "augment", "fuse", "eval", "gradcheck")
_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _pair(text: str, cast=float):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return tuple(cast(p) for p in parts)


def _grid(text: str):
    try:
        m, n = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 7x7, got {text!r}") from None
    if not (1 <= m <= 32 and 1 <= n <= 32):
        raise argparse.ArgumentTypeError("grid dimensions must lie in [1, 32]")
    return m, n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="did-geom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write synthetic KITTI-format frames")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--objects", type=int, default=5)
    s.add_argument("--frames", type=int, default=1)
    s.add_argument("--density", type=float, default=400.0, help="surface points per square metre")
    s.add_argument("--depth", type=_pair, default=(10.0, 45.0), help="lo,hi centre depth in metres")
    s.add_argument("--yaw", type=_pair, default=(-math.pi, math.pi), help="lo,hi yaw in radians")
    s.add_argument("--perfect-dets", action="store_true", help="also write score-1 detections to det_2/")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--jobs", type=int, default=1)

    g = sub.add_parser("gen-labels", help="visual/attribute depth grids from a KITTI-layout directory")
    g.add_argument("--data", type=Path, required=True)
    g.add_argument("--grid", type=_grid, default=(7, 7))
    g.add_argument("--r-max", type=float, default=50.0, help="completion cut-off radius in pixels")
    g.add_argument("--image-size", type=_pair, default=None, help="W,H when meta/ is absent")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--jobs", type=int, default=1)

    a = sub.add_parser("augment", help="random crop/scale (and flip) of frame bundles")
    a.add_argument("--in", dest="inp", type=Path, required=True)
    a.add_argument("--out", type=Path, required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--scale", type=_pair, default=(0.6, 1.4))
    a.add_argument("--shift", type=float, default=0.1)
    a.add_argument("--flip-prob", type=float, default=0.0)
    a.add_argument("--min-visible", type=float, default=0.3)

    f = sub.add_parser("fuse", help="aggregate instance depth and confidence per object")
    f.add_argument("--labels", type=Path, required=True, help="bundle file or directory")
    f.add_argument("--uncertainty", type=Path, required=True)
    f.add_argument("--perturb-seed", type=int, default=None,
                   help="add Laplace noise at the given uncertainty scales before fusing")
    f.add_argument("--out", type=Path, required=True)
    f.add_argument("--kitti-out", type=Path, default=None, help="also write KITTI detections here")

    e = sub.add_parser("eval", help="AP|R40 for BEV and 3D detection")
    e.add_argument("--gt", type=Path, required=True)
    e.add_argument("--det", type=Path, required=True)
    e.add_argument("--iou", type=float, default=None, help="override the per-category IoU threshold")
    e.add_argument("--metric", default="bev,3d")
    e.add_argument("--categories", default=None)
    e.add_argument("--out", type=Path, default=None, help="JSON report path")

    c = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    c.add_argument("--samples", type=int, default=1000)
    c.add_argument("--tol", type=float, default=1e-5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", type=Path, default=None)
    return p


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _config_snapshot(args) -> dict:
    snap = {}
    for k, v in sorted(vars(args).items()):
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        snap[k] = v
    return snap


def _write_manifest(path: Path, args, inputs, outputs, started: float) -> None:
    manifest = {
        "subcommand": args.command,
        "tool_version": __version__,
        "seed": getattr(args, "seed", None),
        "config": _config_snapshot(args),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.perf_counter() - started, 6),
    }
    _write_text(path, dumps(manifest))


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


# synth ----------------------------------------------------------------------


def _synth_frame(job):
    cfg, fid, out, perfect = job
    scene = generate_scene(cfg)
    _write_text(out / kitti_io.CALIB_DIR / f"{fid}.txt", kitti_io.format_calibration(scene.calib))
    _write_text(out / kitti_io.LABEL_DIR / f"{fid}.txt", kitti_io.format_label_file(scene.labels))
    velo = out / kitti_io.VELO_DIR / f"{fid}.bin"
    velo.parent.mkdir(parents=True, exist_ok=True)
    velo.write_bytes(kitti_io.write_point_cloud(scene.points))
    meta = {"frame_id": fid, "image_size": [scene.width, scene.height], "seed": list(cfg.seed),
            "point_owner": scene.owner.tolist()}
    _write_text(out / kitti_io.META_DIR / f"{fid}.json", json.dumps(meta) + "\n")
    if perfect:
        _write_text(out / "det_2" / f"{fid}.txt", kitti_io.format_label_file(perfect_detections(scene)))
    return fid


def cmd_synth(args):
    jobs = []
    for i in range(args.frames):
        cfg = SceneConfig(seed=(args.seed, i), num_objects=args.objects, point_density=args.density,
                          depth_range=args.depth, yaw_range=args.yaw)
        jobs.append((cfg, f"{i:06d}", args.out, args.perfect_dets))
    _map(_synth_frame, jobs, args.jobs)
    return [], [args.out]


# gen-labels -----------------------------------------------------------------


def _image_size(root: Path, fid: str, fallback):
    meta = root / kitti_io.META_DIR / f"{fid}.json"
    if meta.exists():
        w, h = json.loads(meta.read_text())["image_size"]
        return int(w), int(h)
    if fallback is None:
        raise DidGeomError(f"{meta}: no image size (pass --image-size W,H)")
    return int(fallback[0]), int(fallback[1])


def _label_frame(job):
    root, fid, grid, r_max, size, out = job
    calib = kitti_io.load_calib(root, fid)
    labels = kitti_io.load_labels(root / kitti_io.LABEL_DIR / f"{fid}.txt")
    points = calib.velo_to_cam(kitti_io.load_points(root, fid))
    width, height = _image_size(root, fid, size)
    objects = generate_labels(calib, width, height, points, labels, grid=grid, r_max=r_max)
    write_frame(out / f"{fid}.json", Frame(fid, width, height, objects, calib))
    return len(objects)


def cmd_gen_labels(args):
    fids = kitti_io.frame_ids(args.data)
    jobs = [(args.data, fid, args.grid, args.r_max, args.image_size, args.out) for fid in fids]
    args.out.mkdir(parents=True, exist_ok=True)
    counts = _map(_label_frame, jobs, args.jobs)
    logger.info("labelled %d objects in %d frames", sum(counts), len(fids))
    return [args.data], [args.out]


# augment --------------------------------------------------------------------


def _bundle_paths(path: Path) -> list:
    if path.is_dir():
        return sorted(path.glob("*.json"))
    return [path]


def cmd_augment(args):
    args.out.mkdir(parents=True, exist_ok=True)
    paths = [p for p in _bundle_paths(args.inp) if p.name != "manifest.json"]
    for i, path in enumerate(paths):
        frame = read_frame(path)
        rng = np.random.default_rng([args.seed, i])
        t = make_crop_scale(rng, frame.width, frame.height, args.scale, args.shift)
        out = augment_frame(frame, t, args.min_visible)
        if rng.uniform() < args.flip_prob:
            out = horizontal_flip(out)
        write_frame(args.out / path.name, out)
    return paths, [args.out]


# fuse -----------------------------------------------------------------------


def _uncertainty_for(unc: dict, fid: str, index: int) -> dict:
    entry = dict(unc.get("default", {}))
    for item in unc.get("frames", {}).get(fid, []):
        if int(item.get("index", -1)) == index:
            entry.update(item)
    if "u_vis" not in entry or "u_att" not in entry:
        raise DidGeomError(f"no uncertainty for frame {fid} object {index}")
    return entry


def _fuse_frame(frame: Frame, unc: dict, perturb_seed, position: int):
    rng = None if perturb_seed is None else np.random.default_rng([perturb_seed, position])
    records, dets = [], []
    for obj in frame.objects:
        entry = _uncertainty_for(unc, frame.frame_id, obj.index)
        g = obj.grid
        u_vis = np.broadcast_to(np.asarray(entry["u_vis"], dtype=np.float64), g.visual.shape)
        u_att = np.broadcast_to(np.asarray(entry["u_att"], dtype=np.float64), g.visual.shape)
        if rng is not None:
            patch = noisy_patch(g, u_vis, u_att, rng)
        else:
            patch = InstancePatch(g.visual, u_vis, g.attribute, u_att, g.valid)
        if not patch.valid.any():
            logger.warning("frame %s object %d has no valid cell, skipped", frame.frame_id, obj.index)
            continue
        d_ins = aggregate_depth(patch)
        p_ins = instance_confidence(patch)
        score = final_score(float(entry.get("p2d", 1.0)), p_ins)
        u = patch.u_ins[patch.valid]
        records.append({
            "index": obj.index,
            "d_ins": d_ins,
            "u_summary": {"min": float(u.min()), "mean": float(u.mean()), "max": float(u.max())},
            "p_ins": p_ins,
            "score": score,
        })
        if frame.calib is not None:
            lab = obj.label
            loc = recover_location(frame.calib, *obj.center_proj, d_ins, lab.dims[0])
            ry = alpha_to_ry(lab.alpha, loc[0], loc[2])
            dets.append(kitti_io.ObjectLabel(lab.category, lab.truncation, lab.occlusion, lab.alpha,
                                             lab.box2d, lab.dims, loc, ry, score))
    return records, dets


def cmd_fuse(args):
    unc = json.loads(args.uncertainty.read_text(encoding="utf-8"))
    paths = [p for p in _bundle_paths(args.labels) if p.name != "manifest.json"]
    args.out.mkdir(parents=True, exist_ok=True)
    outputs = [args.out]
    for i, path in enumerate(paths):
        frame = read_frame(path)
        records, dets = _fuse_frame(frame, unc, args.perturb_seed, i)
        _write_text(args.out / f"{frame.frame_id}.json", dumps({"frame_id": frame.frame_id, "objects": records}))
        if args.kitti_out is not None:
            _write_text(args.kitti_out / f"{frame.frame_id}.txt", kitti_io.format_label_file(dets))
    if args.kitti_out is not None:
        outputs.append(args.kitti_out)
    return paths + [args.uncertainty], outputs


# eval -----------------------------------------------------------------------


def _label_dir(path: Path) -> Path:
    return path / kitti_io.LABEL_DIR if (path / kitti_io.LABEL_DIR).is_dir() else path


def _read_frames(directory: Path) -> dict:
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    frames = {}
    for p in sorted(directory.glob("*.txt")):
        lines = p.read_text().splitlines()
        labels = []
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                labels.append(kitti_io.parse_label_line(line))
            except DidGeomError as exc:
                raise type(exc)(f"{p}:{lineno}: {exc}") from None
        frames[p.stem] = labels
    return frames


def cmd_eval(args):
    gt_dir, det_dir = _label_dir(args.gt), args.det
    gts, dets = _read_frames(gt_dir), _read_frames(det_dir)
    metrics = tuple(m.strip().lower() for m in args.metric.split(","))
    for m in metrics:
        if m not in ("bev", "3d"):
            raise DidGeomError(f"unknown metric {m!r}")
    cats = None if args.categories is None else [c.strip() for c in args.categories.split(",")]
    config = EvalConfig(categories=cats, metrics=metrics)
    if args.iou is not None:
        names = cats or sorted({g.category for f in gts.values() for g in f})
        config.iou = {c: args.iou for c in names}
    report = evaluate(gts, dets, config)
    sys.stdout.write(report.to_table())
    outputs = []
    if args.out is not None:
        _write_text(args.out, report.to_json())
        outputs.append(args.out)
    return [gt_dir, det_dir], outputs


# gradcheck ------------------------------------------------------------------


def cmd_gradcheck(args):
    result = gradcheck(args.samples, args.seed)
    worst = max(result["laplace_dd"], result["laplace_du"], result["smooth_l1"])
    result["max_rel_error"] = worst
    result["tol"] = args.tol
    result["passed"] = worst <= args.tol and result["stationary_du"] <= 1e-12
    sys.stdout.write(json.dumps(result, indent=1) + "\n")
    outputs = []
    if args.out is not None:
        _write_text(args.out, json.dumps(result, indent=1) + "\n")
        outputs.append(args.out)
    if not result["passed"]:
        raise DidGeomError(f"gradient check failed: max relative error {worst:.3e} > {args.tol:.1e}")
    return [], outputs


COMMANDS = {
    "synth": cmd_synth,
    "gen-labels": cmd_gen_labels,
    "augment": cmd_augment,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def _manifest_path(args, outputs) -> Path:
    out = getattr(args, "out", None)
    if out is None:
        return None
    out = Path(out)
    if out.suffix == "" or out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.stem + ".manifest.json")


def configure_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("DID_GEOM_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv=None) -> int:
    configure_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and not argv[0].startswith("-") and argv[0] not in SUBCOMMANDS:
            raise UnknownSubcommand(f"unknown subcommand {argv[0]!r}; choose from {', '.join(SUBCOMMANDS)}")
        args = parser.parse_args(argv)
        if args.command is None:
            raise UnknownSubcommand(f"missing subcommand; choose from {', '.join(SUBCOMMANDS)}")
        started = time.perf_counter()
        inputs, outputs = COMMANDS[args.command](args)
        manifest = _manifest_path(args, outputs)
        if manifest is not None:
            _write_manifest(manifest, args, inputs, outputs, started)
        return 0
    except (_ArgError, DidGeomError) as exc:
        sys.stderr.write(f"did-geom: error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"did-geom: I/O error: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
