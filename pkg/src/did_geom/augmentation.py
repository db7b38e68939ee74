"""Affine augmentation that keeps 2D annotations and depth labels consistent.

The 2D box and the projected 3D centre move with the image. Visual depth
is divided by the vertical scale factor ``s_y`` (an object drawn ``s_y``
times taller looks ``s_y`` times closer). Attribute depth, dimensions and
the observation angle are object properties and are left untouched.

Horizontal flips are a separate operation (:func:`horizontal_flip`)
because mirroring changes yaw.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .bundle import Frame
from .depth_labels import DepthGrid, LabeledObject
from .errors import BadRange, BadTransform, NonPositiveDepth, ObjectCulled
from .geometry import ry_to_alpha, wrap_angle

logger = logging.getLogger(__name__)

DEFAULT_SCALE_RANGE = (0.6, 1.4)
DEFAULT_SHIFT = 0.1
DEFAULT_MIN_VISIBLE = 0.3


@dataclass(frozen=True, eq=False)
class AffineTransform2D:
    """Pixel map ``[u', v'] = A[:, :2] @ [u, v] + A[:, 2]``.

    ``out_size`` is the ``(width, height)`` of the target image, used for
    visibility culling; ``None`` disables culling.
    """

    matrix: np.ndarray
    out_size: Optional[tuple] = None

    def __post_init__(self):
        A = np.array(self.matrix, dtype=np.float64).reshape(2, 3)
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        if not (self.s_x > 0 and self.s_y > 0):
            raise BadTransform("affine map is singular")

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def s_x(self) -> float:
        return float(np.hypot(*self.matrix[:, 0]))

    @property
    def s_y(self) -> float:
        return float(np.hypot(*self.matrix[:, 1]))

    @property
    def flip(self) -> bool:
        return bool(np.linalg.det(self.linear) < 0)

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrix, IDENTITY))

    def __matmul__(self, other: "AffineTransform2D") -> "AffineTransform2D":
        """``self @ other`` applies ``other`` first."""
        A = self.linear @ other.linear
        b = self.linear @ other.matrix[:, 2] + self.matrix[:, 2]
        return AffineTransform2D(np.hstack([A, b[:, None]]), self.out_size)

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "out_size": None if self.out_size is None else list(self.out_size),
            "s_x": self.s_x,
            "s_y": self.s_y,
            "flip": self.flip,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AffineTransform2D":
        size = d.get("out_size")
        return cls(d["matrix"], None if size is None else tuple(size))

    @classmethod
    def identity(cls, out_size=None) -> "AffineTransform2D":
        return cls(IDENTITY, out_size)

    @classmethod
    def scale_about(cls, s_x: float, s_y: float, u0: float = 0.0, v0: float = 0.0, out_size=None):
        """Scale by ``(s_x, s_y)`` keeping pixel ``(u0, v0)`` fixed."""
        return cls([[s_x, 0.0, u0 - s_x * u0], [0.0, s_y, v0 - s_y * v0]], out_size)

    @classmethod
    def hflip(cls, width: float) -> "AffineTransform2D":
        return cls([[-1.0, 0.0, float(width)], [0.0, 1.0, 0.0]], None)


IDENTITY = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def make_crop_scale(
    seed,
    width: int,
    height: int,
    scale_range: Sequence[float] = DEFAULT_SCALE_RANGE,
    shift_range: float = DEFAULT_SHIFT,
) -> AffineTransform2D:
    """Random crop-and-scale in the CenterNet style.

    A scale ``s ~ U[lo, hi]`` and a crop centre jittered by up to
    ``shift_range`` of the image extent are drawn; the crop centre is
    mapped to the output image centre. ``seed`` may be an int or a
    :class:`numpy.random.Generator`.
    """
    lo, hi = (float(v) for v in scale_range)
    if not (0 < lo <= hi) or shift_range < 0:
        raise BadRange(f"invalid scale range {scale_range} or shift {shift_range}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s = rng.uniform(lo, hi)
    jx, jy = rng.uniform(-1.0, 1.0, size=2)
    cx = width / 2.0 + jx * shift_range * width
    cy = height / 2.0 + jy * shift_range * height
    return AffineTransform2D(
        [[s, 0.0, width / 2.0 - s * cx], [0.0, s, height / 2.0 - s * cy]],
        (int(width), int(height)),
    )


def transform_point(t: AffineTransform2D, u: float, v: float) -> tuple:
    A = t.matrix
    return (A[0, 0] * u + A[0, 1] * v + A[0, 2], A[1, 0] * u + A[1, 1] * v + A[1, 2])


def transform_visual_depth(d_vis, t: AffineTransform2D):
    """Visual depth seen in the transformed image: ``d / s_y``."""
    arr = np.asarray(d_vis, dtype=np.float64)
    if np.any(arr[np.isfinite(arr)] <= 0):
        raise NonPositiveDepth("visual depth must be positive")
    out = arr / t.s_y
    return float(out) if out.ndim == 0 else out


def transform_box(t: AffineTransform2D, box2d) -> tuple:
    u0, v0, u1, v1 = box2d
    pts = np.array([transform_point(t, u, v) for u, v in ((u0, v0), (u1, v0), (u1, v1), (u0, v1))])
    return (float(pts[:, 0].min()), float(pts[:, 1].min()), float(pts[:, 0].max()), float(pts[:, 1].max()))


def visible_fraction(box2d, width: float, height: float) -> float:
    u0, v0, u1, v1 = box2d
    area = (u1 - u0) * (v1 - v0)
    iw = max(min(u1, width) - max(u0, 0.0), 0.0)
    ih = max(min(v1, height) - max(v0, 0.0), 0.0)
    return iw * ih / area if area > 0 else 0.0


def transform_object(
    obj: LabeledObject, t: AffineTransform2D, min_visible: float = DEFAULT_MIN_VISIBLE
) -> LabeledObject:
    """Apply an image-space affine map to one annotated object.

    Raises :class:`ObjectCulled` when less than ``min_visible`` of the
    transformed box lies inside ``t.out_size``. The grid's
    ``instance_depth`` is kept only for maps with ``s_y == 1``; otherwise
    each cell has its own reconstructed depth (visual + attribute) and the
    field becomes ``None``.
    """
    if t.flip:
        raise BadTransform("mirroring maps change yaw; use horizontal_flip")
    if not math.isclose(t.s_x, t.s_y, rel_tol=1e-12):
        logger.warning("anisotropic transform (s_x=%g, s_y=%g): visual depth follows s_y", t.s_x, t.s_y)
    box = transform_box(t, obj.label.box2d)
    if t.out_size is not None:
        frac = visible_fraction(box, *t.out_size)
        if frac < min_visible:
            raise ObjectCulled(f"only {frac:.3f} of the object stays visible")
    grid = obj.grid
    visual = np.where(grid.valid, grid.visual / t.s_y, np.nan)
    new_grid = DepthGrid(
        visual=visual,
        attribute=grid.attribute.copy(),
        valid=grid.valid.copy(),
        instance_depth=grid.instance_depth if t.s_y == 1.0 else None,
    )
    return LabeledObject(
        index=obj.index,
        label=replace(obj.label, box2d=box),
        center_proj=transform_point(t, *obj.center_proj),
        grid=new_grid,
    )


def augment_frame(
    frame: Frame, t: AffineTransform2D, min_visible: float = DEFAULT_MIN_VISIBLE
) -> Frame:
    """Transform every object; culled objects are dropped."""
    kept = []
    for obj in frame.objects:
        try:
            kept.append(transform_object(obj, t, min_visible))
        except ObjectCulled:
            logger.debug("object %d culled", obj.index)
    width, height = t.out_size if t.out_size is not None else (frame.width, frame.height)
    return replace(
        frame,
        width=int(width),
        height=int(height),
        objects=kept,
        transforms=frame.transforms + [{"kind": "affine", **t.to_dict()}],
    )


def flip_object(obj: LabeledObject, width: float) -> LabeledObject:
    lab = obj.label
    u0, v0, u1, v1 = lab.box2d
    x, y, z = lab.location
    ry = wrap_angle(math.pi - lab.ry)
    alpha = ry_to_alpha(ry, -x, z)
    label = replace(lab, box2d=(width - u1, v0, width - u0, v1), location=(-x, y, z), ry=ry, alpha=alpha)
    g = obj.grid
    grid = DepthGrid(
        visual=np.fliplr(g.visual).copy(),
        attribute=np.fliplr(g.attribute).copy(),
        valid=np.fliplr(g.valid).copy(),
        instance_depth=g.instance_depth,
    )
    u, v = obj.center_proj
    return LabeledObject(obj.index, label, (width - u, v), grid)


def horizontal_flip(frame: Frame) -> Frame:
    """Mirror the frame about the vertical image axis.

    Yaw maps to ``pi - ry``, x to ``-x`` and alpha is recomputed; depth
    grids are mirrored column-wise with unchanged values.
    """
    return replace(
        frame,
        objects=[flip_object(o, frame.width) for o in frame.objects],
        transforms=frame.transforms + [{"kind": "hflip", "width": frame.width}],
    )
