"""Camera projection, box geometry, multi-bin orientation and rotated IoU.

Conventions (rectified KITTI camera frame): x right, y down, z forward.
Box locations are bottom-face centres; ``ry`` rotates about the y-axis and
``ry = 0`` puts the length axis along camera x. Angles are wrapped to
``[-pi, pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import BehindCamera, DegenerateBox, InvalidBinCount, NonPositiveDepth
from .kitti_io import CameraCalib

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to ``[-pi, pi)``; ``pi`` itself maps to ``-pi``."""
    out = a - TWO_PI * math.floor((a + math.pi) / TWO_PI)
    if out >= math.pi:
        out -= TWO_PI
    return out


def wrap_angles(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    out = a - TWO_PI * np.floor((a + math.pi) / TWO_PI)
    return np.where(out >= math.pi, out - TWO_PI, out)


@dataclass(frozen=True)
class Box3D:
    """Minimal 3D box: bottom-face centre, ``(h, w, l)`` and yaw.

    :class:`~did_geom.kitti_io.ObjectLabel` exposes the same three
    attributes, so either can be passed wherever a box is expected.
    """

    location: tuple
    dims: tuple
    ry: float


# Projection ------------------------------------------------------------------


def project_point(calib: CameraCalib, p) -> tuple:
    """Project a camera-frame point to ``(u, v, depth)``."""
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise BehindCamera(f"point {tuple(p)} is not in front of the camera")
    u = (calib.f_u * x + calib.c_u * z + calib.t_x) / z
    v = (calib.f_v * y + calib.c_v * z + calib.t_y) / z
    return u, v, z


def project_points(calib: CameraCalib, xyz: np.ndarray):
    """Vectorised :func:`project_point`.

    Returns ``(uv, depth, in_front)``; rows with ``z <= 0`` carry NaN
    coordinates.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    z = xyz[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (calib.f_u * xyz[:, 0] + calib.c_u * z + calib.t_x) / z
        v = (calib.f_v * xyz[:, 1] + calib.c_v * z + calib.t_y) / z
    uv = np.stack([u, v], axis=1)
    uv[~in_front] = np.nan
    return uv, z.copy(), in_front


def backproject(calib: CameraCalib, u: float, v: float, depth: float) -> tuple:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    x = (u * depth - calib.c_u * depth - calib.t_x) / calib.f_u
    y = (v * depth - calib.c_v * depth - calib.t_y) / calib.f_v
    return x, y, float(depth)


def recover_location(calib: CameraCalib, u: float, v: float, depth: float, h: float) -> tuple:
    """Bottom-face centre from the projected 3D centre and instance depth."""
    x, y, z = backproject(calib, u, v, depth)
    return x, y + h / 2.0, z


# Orientation -----------------------------------------------------------------


class MultiBinAngle(NamedTuple):
    bin_index: int
    residual: float
    k: int


def encode_orientation(theta: float, k: int = 12) -> MultiBinAngle:
    """Split an angle into a bin index and a residual to the bin centre.

    Bin centres sit at ``2*pi*i/k``. An angle exactly half-way between two
    centres goes to the lower bin index.
    """
    if k < 2:
        raise InvalidBinCount(f"need at least 2 bins, got {k}")
    width = TWO_PI / k
    q = (wrap_angle(theta) % TWO_PI) / width
    lo = math.floor(q)
    frac = q - lo
    if frac < 0.5:
        idx = lo
    elif frac > 0.5:
        idx = lo + 1
    else:
        idx = min(lo % k, (lo + 1) % k)
    idx %= k
    residual = wrap_angle(theta - idx * width)
    return MultiBinAngle(idx, residual, k)


def decode_orientation(m: MultiBinAngle) -> float:
    if m.k < 2:
        raise InvalidBinCount(f"need at least 2 bins, got {m.k}")
    return wrap_angle(m.bin_index * TWO_PI / m.k + m.residual)


def ry_to_alpha(ry: float, x: float, z: float) -> float:
    """Observation angle from global yaw and object position."""
    if not z > 0:
        raise NonPositiveDepth(f"z must be positive, got {z}")
    return wrap_angle(ry - math.atan2(x, z))


def alpha_to_ry(alpha: float, x: float, z: float) -> float:
    if not z > 0:
        raise NonPositiveDepth(f"z must be positive, got {z}")
    return wrap_angle(alpha + math.atan2(x, z))


# Box geometry ----------------------------------------------------------------

# (x, z) footprint in box coordinates, counter-clockwise
_FOOTPRINT = np.array([[0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5]])


def _check_dims(box) -> tuple:
    h, w, l = (float(d) for d in box.dims)
    if not (h > 0 and w > 0 and l > 0) or not all(map(math.isfinite, (h, w, l))):
        raise DegenerateBox(f"box dimensions {box.dims} must be positive and finite")
    return h, w, l


def _yaw_matrix(ry: float) -> np.ndarray:
    c, s = math.cos(ry), math.sin(ry)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def corners_3d(box) -> np.ndarray:
    """The 8 corners as an ``(8, 3)`` array.

    Rows 0-3 are the bottom face (y = location y), rows 4-7 the top face,
    both following the counter-clockwise footprint order.
    """
    h, w, l = _check_dims(box)
    fx = _FOOTPRINT[:, 0] * l
    fz = _FOOTPRINT[:, 1] * w
    local = np.stack(
        [np.concatenate([fx, fx]), np.concatenate([np.zeros(4), np.full(4, -h)]), np.concatenate([fz, fz])]
    )
    return (_yaw_matrix(box.ry) @ local).T + np.asarray(box.location, dtype=np.float64)


def bev_polygon(box) -> np.ndarray:
    """Counter-clockwise ``(4, 2)`` footprint in the ``(x, z)`` plane."""
    _, w, l = _check_dims(box)
    c, s = math.cos(box.ry), math.sin(box.ry)
    lx = _FOOTPRINT[:, 0] * l
    lz = _FOOTPRINT[:, 1] * w
    x = c * lx + s * lz + box.location[0]
    z = -s * lx + c * lz + box.location[2]
    return np.stack([x, z], axis=1)


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` against convex CCW ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        points = output
        output = []
        prev = points[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in points:
            cur_side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if cur_side >= 0:
                if prev_side < 0:
                    output.append(_cross_point(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0:
                output.append(_cross_point(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_overlap_area(a, b) -> float:
    pa, pb = bev_polygon(a), bev_polygon(b)
    # cheap reject on bounding circles
    ra = 0.5 * math.hypot(a.dims[1], a.dims[2])
    rb = 0.5 * math.hypot(b.dims[1], b.dims[2])
    if math.hypot(a.location[0] - b.location[0], a.location[2] - b.location[2]) > ra + rb:
        return 0.0
    inter = clip_polygon(pa, pb)
    return max(polygon_area(inter), 0.0)


def iou_bev(a, b) -> float:
    """Rotated footprint IoU in the ground plane."""
    inter = bev_overlap_area(a, b)
    area_a = a.dims[1] * a.dims[2]
    area_b = b.dims[1] * b.dims[2]
    return float(min(max(inter / (area_a + area_b - inter), 0.0), 1.0))


def _y_overlap(a, b) -> float:
    # boxes span [y_bottom - h, y_bottom]
    top = max(a.location[1] - a.dims[0], b.location[1] - b.dims[0])
    bottom = min(a.location[1], b.location[1])
    return max(bottom - top, 0.0)


def iou_3d(a, b) -> float:
    inter = bev_overlap_area(a, b) * _y_overlap(a, b)
    vol_a = a.dims[0] * a.dims[1] * a.dims[2]
    vol_b = b.dims[0] * b.dims[1] * b.dims[2]
    return float(min(max(inter / (vol_a + vol_b - inter), 0.0), 1.0))


def box2d_from_3d(calib: CameraCalib, box) -> tuple:
    """Tight 2D box of the projected corners (not clipped to the image)."""
    corners = corners_3d(box)
    if not (corners[:, 2] > 0).all():
        raise BehindCamera("box crosses the camera plane")
    uv, _, _ = project_points(calib, corners)
    return (float(uv[:, 0].min()), float(uv[:, 1].min()), float(uv[:, 0].max()), float(uv[:, 1].max()))


def box_faces(box) -> list:
    """The four vertical faces as ``(corner_indices, outward_normal)``.

    Corner indices refer to :func:`corners_3d`; each face is spanned by
    bottom corners ``i, j`` and their top counterparts.
    """
    _check_dims(box)
    R = _yaw_matrix(box.ry)
    faces = []
    for i in range(4):
        j = (i + 1) % 4
        mid = 0.5 * (_FOOTPRINT[i] + _FOOTPRINT[j])
        n_local = np.array([2.0 * mid[0], 0.0, 2.0 * mid[1]])
        faces.append(((i, j, j + 4, i + 4), R @ n_local))
    return faces
