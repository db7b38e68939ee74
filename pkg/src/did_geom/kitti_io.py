"""Readers and writers for the KITTI object-detection file formats.

Three formats are handled:

* calibration text files (``P0`` .. ``P3``, ``R0_rect``, ``Tr_velo_to_cam``);
  only ``P2`` is required,
* label / detection text files, one object per line with 15 fields
  (ground truth) or 16 fields (detections, trailing score),
* velodyne ``.bin`` point clouds, little-endian float32 ``(x, y, z, r)``.

Labels are written with 2 decimals, which is lossy; calibration values are
written with ``repr`` precision so that parsing a written file is exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InvalidCalibration,
    InvalidLabel,
    MalformedNumber,
    MissingKey,
    MissingScore,
    TruncatedFile,
    WrongArity,
)

logger = logging.getLogger(__name__)

LABEL_PRECISION = 2
_POINT_DTYPE = np.dtype("<f4")


def _to_float(token: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise MalformedNumber(f"cannot parse {token!r} as a number") from None


@dataclass(frozen=True, eq=False)
class CameraCalib:
    """Left colour camera projection plus optional LiDAR extrinsics.

    ``P`` is the 3x4 ``P2`` matrix. ``R0_rect`` (3x3) and ``Tr_velo_to_cam``
    (3x4) are only needed to bring raw velodyne clouds into the rectified
    camera frame.
    """

    P: np.ndarray
    R0_rect: Optional[np.ndarray] = None
    Tr_velo_to_cam: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64).reshape(3, 4)
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        for name, shape in (("R0_rect", (3, 3)), ("Tr_velo_to_cam", (3, 4))):
            value = getattr(self, name)
            if value is not None:
                arr = np.array(value, dtype=np.float64).reshape(shape)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if not (self.f_u > 0 and self.f_v > 0):
            raise InvalidCalibration(f"focal lengths must be positive, got {self.f_u}, {self.f_v}")

    @property
    def f_u(self) -> float:
        return float(self.P[0, 0])

    @property
    def f_v(self) -> float:
        return float(self.P[1, 1])

    @property
    def c_u(self) -> float:
        return float(self.P[0, 2])

    @property
    def c_v(self) -> float:
        return float(self.P[1, 2])

    @property
    def t_x(self) -> float:
        return float(self.P[0, 3])

    @property
    def t_y(self) -> float:
        return float(self.P[1, 3])

    @classmethod
    def from_intrinsics(cls, f_u, f_v, c_u, c_v, t_x=0.0, t_y=0.0, t_z=0.0) -> "CameraCalib":
        return cls(P=[[f_u, 0.0, c_u, t_x], [0.0, f_v, c_v, t_y], [0.0, 0.0, 1.0, t_z]])

    def scaled(self, s: float) -> "CameraCalib":
        """Calibration of the same camera after resizing the image by ``s``."""
        P = self.P.copy()
        P[:2] *= s
        return replace(self, P=P)

    def velo_to_cam(self, points: np.ndarray) -> np.ndarray:
        """Map ``(N, 3+)`` velodyne points to the rectified camera frame.

        Returns the input unchanged (first three columns) when the
        extrinsics are absent, which is the convention for synthetic clouds
        that are generated in the camera frame already.
        """
        xyz = np.asarray(points, dtype=np.float64)[:, :3]
        if self.Tr_velo_to_cam is None:
            return xyz.copy()
        cam = xyz @ self.Tr_velo_to_cam[:, :3].T + self.Tr_velo_to_cam[:, 3]
        if self.R0_rect is not None:
            cam = cam @ self.R0_rect.T
        return cam

    def same_as(self, other: "CameraCalib") -> bool:
        def _eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return bool(np.array_equal(a, b))

        return _eq(self.P, other.P) and _eq(self.R0_rect, other.R0_rect) and _eq(
            self.Tr_velo_to_cam, other.Tr_velo_to_cam
        )


def _parse_matrix_line(values: Sequence[str], arity: int, key: str) -> list:
    if len(values) != arity:
        raise WrongArity(f"{key} expects {arity} values, got {len(values)}")
    return [_to_float(v) for v in values]


def parse_calibration(text: str) -> CameraCalib:
    """Parse a KITTI calibration file.

    Only ``P2`` is mandatory. ``R0_rect`` and ``Tr_velo_to_cam`` are
    picked up when present.
    """
    entries = {}
    for raw in text.splitlines():
        if ":" not in raw:
            continue
        key, _, rest = raw.partition(":")
        entries[key.strip()] = rest.split()
    if "P2" not in entries:
        raise MissingKey("calibration has no 'P2:' line")
    P = _parse_matrix_line(entries["P2"], 12, "P2")
    R0 = Tr = None
    if "R0_rect" in entries:
        R0 = _parse_matrix_line(entries["R0_rect"], 9, "R0_rect")
    if "Tr_velo_to_cam" in entries:
        Tr = _parse_matrix_line(entries["Tr_velo_to_cam"], 12, "Tr_velo_to_cam")
    return CameraCalib(P=P, R0_rect=R0, Tr_velo_to_cam=Tr)


def _fmt_exact(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def format_calibration(calib: CameraCalib) -> str:
    """Write a calibration file in KITTI layout.

    P0, P1 and P3 are filled with the P2 matrix so that standard tooling
    that indexes lines positionally still finds a valid file.
    """
    R0 = calib.R0_rect if calib.R0_rect is not None else np.eye(3)
    Tr = calib.Tr_velo_to_cam if calib.Tr_velo_to_cam is not None else np.hstack([np.eye(3), np.zeros((3, 1))])
    lines = [f"P{i}: {_fmt_exact(calib.P)}" for i in range(4)]
    lines.append(f"R0_rect: {_fmt_exact(R0)}")
    lines.append(f"Tr_velo_to_cam: {_fmt_exact(Tr)}")
    lines.append(f"Tr_imu_to_velo: {_fmt_exact(np.hstack([np.eye(3), np.zeros((3, 1))]))}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ObjectLabel:
    """One line of a KITTI label or detection file.

    ``location`` is the bottom-face centre in the rectified camera frame,
    ``dims`` is ``(h, w, l)``. ``score`` is ``None`` for ground truth.
    """

    category: str
    truncation: float
    occlusion: int
    alpha: float
    box2d: tuple
    dims: tuple
    location: tuple
    ry: float
    score: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "box2d", tuple(float(v) for v in self.box2d))
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        object.__setattr__(self, "location", tuple(float(v) for v in self.location))
        u0, v0, u1, v1 = self.box2d
        if not (u0 < u1 and v0 < v1):
            raise InvalidLabel(f"2D box {self.box2d} is empty or inverted")
        if self.category != "DontCare" and min(self.dims) <= 0:
            raise InvalidLabel(f"dimensions {self.dims} must be positive")

    @property
    def height_2d(self) -> float:
        return self.box2d[3] - self.box2d[1]

    @property
    def center_3d(self) -> tuple:
        """Volumetric centre; KITTI stores the bottom-face centre."""
        x, y, z = self.location
        return (x, y - self.dims[0] / 2.0, z)

    def with_score(self, score: Optional[float]) -> "ObjectLabel":
        return replace(self, score=score)


def parse_label_line(text: str) -> ObjectLabel:
    tokens = text.split()
    if len(tokens) not in (15, 16):
        raise WrongArity(f"label line needs 15 or 16 fields, got {len(tokens)}")
    nums = [_to_float(t) for t in tokens[1:]]
    occ = nums[1]
    if not occ.is_integer():
        raise MalformedNumber(f"occlusion must be an integer, got {tokens[2]!r}")
    return ObjectLabel(
        category=tokens[0],
        truncation=nums[0],
        occlusion=int(occ),
        alpha=nums[2],
        box2d=tuple(nums[3:7]),
        dims=tuple(nums[7:10]),
        location=tuple(nums[10:13]),
        ry=nums[13],
        score=nums[14] if len(tokens) == 16 else None,
    )


def parse_label_file(text: str) -> list:
    return [parse_label_line(line) for line in text.splitlines() if line.strip()]


def _format_fields(label: ObjectLabel) -> list:
    p = LABEL_PRECISION
    reals = [label.alpha, *label.box2d, *label.dims, *label.location, label.ry]
    return [label.category, f"{label.truncation:.{p}f}", str(int(label.occlusion))] + [f"{v:.{p}f}" for v in reals]


def serialize_label(label: ObjectLabel) -> str:
    """15 fields, or 16 when a score is present."""
    fields = _format_fields(label)
    if label.score is not None:
        fields.append(f"{label.score:.{LABEL_PRECISION}f}")
    return " ".join(fields)


def serialize_detection(label: ObjectLabel) -> str:
    """16-field detection line; reals at :data:`LABEL_PRECISION` decimals."""
    if label.score is None:
        raise MissingScore("detections must carry a score")
    return serialize_label(label)


def format_label_file(labels: Sequence[ObjectLabel]) -> str:
    return "".join(serialize_label(lab) + "\n" for lab in labels)


def read_point_cloud(data: bytes) -> np.ndarray:
    """Decode a velodyne buffer into an ``(N, 4)`` float32 array.

    Records holding NaN or inf are dropped with a warning.
    """
    if len(data) % 16:
        raise TruncatedFile(f"point cloud length {len(data)} is not a multiple of 16")
    points = np.frombuffer(data, dtype=_POINT_DTYPE).reshape(-1, 4).astype(np.float32)
    finite = np.isfinite(points).all(axis=1)
    if not finite.all():
        logger.warning("dropping %d non-finite point records", int((~finite).sum()))
        points = points[finite]
    return points


def write_point_cloud(points: np.ndarray) -> bytes:
    arr = np.asarray(points)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise WrongArity(f"point cloud must have shape (N, 4), got {arr.shape}")
    return np.ascontiguousarray(arr, dtype=_POINT_DTYPE).tobytes()


# Dataset directory helpers ---------------------------------------------------

CALIB_DIR = "calib"
LABEL_DIR = "label_2"
VELO_DIR = "velodyne"
META_DIR = "meta"


def frame_ids(root: Path, subdir: str = LABEL_DIR, suffix: str = ".txt") -> list:
    return sorted(p.stem for p in (Path(root) / subdir).glob(f"*{suffix}"))


def load_calib(root: Path, frame_id: str) -> CameraCalib:
    return parse_calibration((Path(root) / CALIB_DIR / f"{frame_id}.txt").read_text())


def load_labels(path: Path) -> list:
    return parse_label_file(Path(path).read_text())


def load_points(root: Path, frame_id: str) -> np.ndarray:
    return read_point_cloud((Path(root) / VELO_DIR / f"{frame_id}.bin").read_bytes())


__all__ = [
    "CameraCalib",
    "ObjectLabel",
    "LABEL_PRECISION",
    "parse_calibration",
    "format_calibration",
    "parse_label_line",
    "parse_label_file",
    "serialize_label",
    "serialize_detection",
    "format_label_file",
    "read_point_cloud",
    "write_point_cloud",
]
