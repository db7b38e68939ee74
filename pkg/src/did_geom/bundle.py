"""JSON frame bundles: labels, depth grids and transform history of one frame.

Output is byte-stable: fixed key order, ``repr`` floats, invalid cells as
``null``, LF line endings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .depth_labels import DepthGrid, LabeledObject
from .kitti_io import CameraCalib, ObjectLabel

FORMAT_VERSION = 1


@dataclass
class Frame:
    frame_id: str
    width: int
    height: int
    objects: list
    calib: Optional[CameraCalib] = None
    transforms: list = field(default_factory=list)


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _grid_values(a: np.ndarray) -> list:
    return [[_num(v) for v in row] for row in a]


def _label_to_dict(lab: ObjectLabel) -> dict:
    return {
        "category": lab.category,
        "truncation": lab.truncation,
        "occlusion": lab.occlusion,
        "alpha": lab.alpha,
        "box2d": list(lab.box2d),
        "dims": list(lab.dims),
        "location": list(lab.location),
        "ry": lab.ry,
        "score": lab.score,
    }


def _label_from_dict(d: dict) -> ObjectLabel:
    return ObjectLabel(
        category=d["category"],
        truncation=d["truncation"],
        occlusion=int(d["occlusion"]),
        alpha=d["alpha"],
        box2d=tuple(d["box2d"]),
        dims=tuple(d["dims"]),
        location=tuple(d["location"]),
        ry=d["ry"],
        score=d.get("score"),
    )


def object_to_dict(obj: LabeledObject) -> dict:
    g = obj.grid
    return {
        "index": obj.index,
        "label": _label_to_dict(obj.label),
        "center_proj": [float(c) for c in obj.center_proj],
        "grid": {
            "shape": list(g.visual.shape),
            "instance_depth": None if g.instance_depth is None else float(g.instance_depth),
            "visual": _grid_values(g.visual),
            "attribute": _grid_values(g.attribute),
            "valid": g.valid.tolist(),
        },
    }


def _decode_grid(rows) -> np.ndarray:
    return np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=np.float64)


def object_from_dict(d: dict) -> LabeledObject:
    g = d["grid"]
    grid = DepthGrid(
        visual=_decode_grid(g["visual"]),
        attribute=_decode_grid(g["attribute"]),
        valid=np.array(g["valid"], dtype=bool),
        instance_depth=g["instance_depth"],
    )
    return LabeledObject(int(d["index"]), _label_from_dict(d["label"]), tuple(d["center_proj"]), grid)


def frame_to_dict(frame: Frame) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "frame_id": frame.frame_id,
        "image_size": [frame.width, frame.height],
        "calib_P2": None if frame.calib is None else frame.calib.P.tolist(),
        "transforms": frame.transforms,
        "objects": [object_to_dict(o) for o in frame.objects],
    }


def frame_from_dict(d: dict) -> Frame:
    calib = None if d.get("calib_P2") is None else CameraCalib(P=d["calib_P2"])
    w, h = d["image_size"]
    return Frame(
        frame_id=d["frame_id"],
        width=int(w),
        height=int(h),
        objects=[object_from_dict(o) for o in d["objects"]],
        calib=calib,
        transforms=list(d.get("transforms", [])),
    )


def dumps(data) -> str:
    return json.dumps(data, indent=1, allow_nan=False) + "\n"


def write_frame(path: Path, frame: Frame) -> None:
    Path(path).write_text(dumps(frame_to_dict(frame)), encoding="utf-8", newline="\n")


def read_frame(path: Path) -> Frame:
    return frame_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
