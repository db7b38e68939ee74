"""Visual and attribute depth labels on per-object RoI grids.

Pipeline: camera-frame points are projected into a sparse depth map
(nearest point wins a pixel), the map is densified by nearest-observation
fill, the object's 2D box is cut into an ``m x n`` grid and each cell's
visual depth is the mean dense depth of the pixels whose centres fall in
it. Attribute depth is what remains to reach the instance depth.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyBox, NonPositiveInstanceDepth
from .geometry import project_point, project_points
from .kitti_io import CameraCalib, ObjectLabel

logger = logging.getLogger(__name__)

DEFAULT_GRID = (7, 7)
DEFAULT_R_MAX = 50.0


@dataclass
class SparseDepthMap:
    """Observed pixels only, sorted by ``(v, u)``.

    ``owner`` optionally tags each observation with the id of the object
    whose point produced it (``-1`` for untagged points).
    """

    width: int
    height: int
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    owner: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.depth)

    def to_array(self) -> np.ndarray:
        """Dense ``(H, W)`` array with 0 where nothing was observed."""
        out = np.zeros((self.height, self.width))
        out[self.v, self.u] = self.depth
        return out

    @classmethod
    def from_array(cls, depth: np.ndarray) -> "SparseDepthMap":
        v, u = np.nonzero(depth > 0)
        return cls(depth.shape[1], depth.shape[0], u, v, depth[v, u].astype(np.float64))


@dataclass
class DenseDepthMap:
    width: int
    height: int
    depth: np.ndarray
    valid: np.ndarray
    owner: Optional[np.ndarray] = None


@dataclass
class DepthGrid:
    """Per-object grid labels; invalid cells hold NaN."""

    visual: np.ndarray
    attribute: np.ndarray
    valid: np.ndarray
    instance_depth: Optional[float]

    @property
    def shape(self) -> tuple:
        return self.visual.shape


def build_sparse_depth(
    points: np.ndarray,
    calib: CameraCalib,
    width: int,
    height: int,
    owner: Optional[np.ndarray] = None,
) -> SparseDepthMap:
    """Project camera-frame points into a sparse depth map.

    Pixel ``(i, j)`` covers ``[i, i+1) x [j, j+1)``. When several points
    land on one pixel the smallest depth is kept.
    """
    xyz = np.asarray(points, dtype=np.float64)
    xyz = xyz[:, :3] if xyz.size else np.zeros((0, 3))
    uv, depth, in_front = project_points(calib, xyz)
    keep = in_front & np.isfinite(uv).all(axis=1)
    uv = uv[keep]
    depth = depth[keep]
    tags = np.full(len(xyz), -1, dtype=np.int64) if owner is None else np.asarray(owner, dtype=np.int64)
    tags = tags[keep]
    col = np.floor(uv[:, 0])
    row = np.floor(uv[:, 1])
    inside = (col >= 0) & (col < width) & (row >= 0) & (row < height)
    col = col[inside].astype(np.int64)
    row = row[inside].astype(np.int64)
    depth = depth[inside]
    tags = tags[inside]
    flat = row * width + col
    # primary key pixel, then depth, then owner id for exact ties
    order = np.lexsort((tags, depth, flat))
    flat, depth, tags = flat[order], depth[order], tags[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    flat, depth, tags = flat[first], depth[first], tags[first]
    return SparseDepthMap(
        width=width,
        height=height,
        u=flat % width,
        v=flat // width,
        depth=depth,
        owner=None if owner is None else tags,
    )


def complete_depth(
    sparse: SparseDepthMap,
    r_max: float = DEFAULT_R_MAX,
    mask: Optional[np.ndarray] = None,
) -> DenseDepthMap:
    """Fill every pixel with the depth of its nearest observed pixel.

    Distances are Euclidean in pixel units; equidistant observations
    resolve to the smaller depth. Pixels farther than ``r_max`` from all
    observations are invalid. ``mask`` (``H x W`` bool) restricts which
    pixels are evaluated; the rest are left invalid.
    """
    H, W = sparse.height, sparse.width
    depth = np.zeros((H, W))
    valid = np.zeros((H, W), dtype=bool)
    owner = None if sparse.owner is None else np.full((H, W), -1, dtype=np.int64)
    if len(sparse) == 0:
        return DenseDepthMap(W, H, depth, valid, owner)

    if mask is None:
        qv, qu = np.mgrid[0:H, 0:W]
        qv, qu = qv.ravel(), qu.ravel()
    else:
        qv, qu = np.nonzero(mask)
    if len(qv) == 0:
        return DenseDepthMap(W, H, depth, valid, owner)

    obs = np.stack([sparse.u, sparse.v], axis=1).astype(np.int64)
    tree = cKDTree(obs)
    queries = np.stack([qu, qv], axis=1)
    k = min(8, len(obs))
    dist, idx = tree.query(queries, k=k, distance_upper_bound=r_max + 1.0)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    found = np.isfinite(dist[:, 0])

    q = queries[found]
    idx = idx[found]
    # exact integer squared distances decide ties
    nb = obs[np.minimum(idx, len(obs) - 1)]
    d2 = ((nb - q[:, None, :]) ** 2).sum(axis=2)
    d2 = np.where(idx < len(obs), d2, np.iinfo(np.int64).max)
    best = d2.min(axis=1)
    tied = d2 == best[:, None]
    cand_depth = np.where(tied, sparse.depth[np.minimum(idx, len(obs) - 1)], np.inf)
    pick = np.argmin(cand_depth, axis=1)
    chosen = idx[np.arange(len(idx)), pick]

    # every neighbour tied: the tie set may extend beyond k
    overflow = np.nonzero(tied.all(axis=1) & (k < len(obs)))[0]
    for row in overflow:
        members = tree.query_ball_point(q[row], math.sqrt(best[row]) + 1e-9)
        members = [m for m in members if ((obs[m] - q[row]) ** 2).sum() == best[row]]
        chosen[row] = min(members, key=lambda m: (sparse.depth[m], m))

    ok = best <= r_max * r_max
    q, chosen = q[ok], chosen[ok]
    depth[q[:, 1], q[:, 0]] = sparse.depth[chosen]
    valid[q[:, 1], q[:, 0]] = True
    if owner is not None:
        owner[q[:, 1], q[:, 0]] = sparse.owner[chosen]
    return DenseDepthMap(W, H, depth, valid, owner)


def clip_box(box2d: Sequence[float], width: int, height: int) -> tuple:
    u0, v0, u1, v1 = box2d
    return (max(u0, 0.0), max(v0, 0.0), min(u1, float(width)), min(v1, float(height)))


def _cell_membership(box2d, m: int, n: int, width: int, height: int):
    """Pixel rows/cols inside the box and their cell indices."""
    u0, v0, u1, v1 = clip_box(box2d, width, height)
    if not (u1 > u0 and v1 > v0):
        raise EmptyBox(f"box {tuple(box2d)} has no area inside the {width}x{height} image")
    # pixel centre c = i + 0.5 lies in [u0, u1)
    cols = np.arange(math.ceil(u0 - 0.5), math.ceil(u1 - 0.5))
    rows = np.arange(math.ceil(v0 - 0.5), math.ceil(v1 - 0.5))
    cols = cols[(cols >= 0) & (cols < width)]
    rows = rows[(rows >= 0) & (rows < height)]
    u_edges = u0 + (u1 - u0) * np.arange(n + 1) / n
    v_edges = v0 + (v1 - v0) * np.arange(m + 1) / m
    cj = np.clip(np.searchsorted(u_edges, cols + 0.5, side="right") - 1, 0, n - 1)
    ci = np.clip(np.searchsorted(v_edges, rows + 0.5, side="right") - 1, 0, m - 1)
    return rows, cols, ci, cj


def grid_visual_depth(dense: DenseDepthMap, box2d, m: int = 7, n: int = 7):
    """Mean valid dense depth per grid cell.

    Returns ``(visual, valid)``; cells without any valid pixel are invalid
    and hold NaN.
    """
    rows, cols, ci, cj = _cell_membership(box2d, m, n, dense.width, dense.height)
    sub_valid = dense.valid[np.ix_(rows, cols)]
    sub_depth = np.where(sub_valid, dense.depth[np.ix_(rows, cols)], 0.0)
    cell = (ci[:, None] * n + cj[None, :]).ravel()
    counts = np.bincount(cell, weights=sub_valid.ravel().astype(np.float64), minlength=m * n)
    sums = np.bincount(cell, weights=sub_depth.ravel(), minlength=m * n)
    valid = counts > 0
    visual = np.full(m * n, np.nan)
    visual[valid] = sums[valid] / counts[valid]
    return visual.reshape(m, n), valid.reshape(m, n)


def grid_ownership(dense: DenseDepthMap, box2d, owner_id: int, m: int = 7, n: int = 7) -> np.ndarray:
    """Per-cell fraction of valid pixels whose depth came from ``owner_id``."""
    if dense.owner is None:
        raise ValueError("dense map carries no ownership information")
    rows, cols, ci, cj = _cell_membership(box2d, m, n, dense.width, dense.height)
    sub_valid = dense.valid[np.ix_(rows, cols)]
    mine = sub_valid & (dense.owner[np.ix_(rows, cols)] == owner_id)
    cell = (ci[:, None] * n + cj[None, :]).ravel()
    counts = np.bincount(cell, weights=sub_valid.ravel().astype(np.float64), minlength=m * n)
    own = np.bincount(cell, weights=mine.ravel().astype(np.float64), minlength=m * n)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(counts > 0, own / counts, 0.0)
    return frac.reshape(m, n)


def attribute_depth_labels(visual: np.ndarray, valid: np.ndarray, instance_depth: float) -> np.ndarray:
    """Instance depth minus visual depth on valid cells, NaN elsewhere."""
    if not instance_depth > 0:
        raise NonPositiveInstanceDepth(f"instance depth must be positive, got {instance_depth}")
    visual = np.asarray(visual, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    return np.where(valid, instance_depth - visual, np.nan)


def make_depth_grid(dense: DenseDepthMap, box2d, instance_depth: float, m: int = 7, n: int = 7) -> DepthGrid:
    visual, valid = grid_visual_depth(dense, box2d, m, n)
    attribute = attribute_depth_labels(visual, valid, instance_depth)
    return DepthGrid(visual=visual, attribute=attribute, valid=valid, instance_depth=float(instance_depth))


@dataclass
class LabeledObject:
    """A ground-truth object together with its depth grid.

    ``index`` is the line number in the source label file and
    ``center_proj`` the projection of the volumetric 3D centre.
    """

    index: int
    label: ObjectLabel
    center_proj: tuple
    grid: DepthGrid


def boxes_mask(boxes: Sequence, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for box in boxes:
        u0, v0, u1, v1 = clip_box(box, width, height)
        c0, c1 = max(math.ceil(u0 - 0.5), 0), min(math.ceil(u1 - 0.5), width)
        r0, r1 = max(math.ceil(v0 - 0.5), 0), min(math.ceil(v1 - 0.5), height)
        if c1 > c0 and r1 > r0:
            mask[r0:r1, c0:c1] = True
    return mask


def generate_labels(
    calib: CameraCalib,
    width: int,
    height: int,
    points: np.ndarray,
    labels: Sequence[ObjectLabel],
    grid: tuple = DEFAULT_GRID,
    r_max: float = DEFAULT_R_MAX,
    owner: Optional[np.ndarray] = None,
    return_dense: bool = False,
):
    """Depth grids for every usable object of one frame.

    ``points`` must already be in the rectified camera frame. DontCare
    entries and objects whose box misses the image are skipped.
    """
    m, n = grid
    usable = []
    for i, lab in enumerate(labels):
        if lab.category == "DontCare" or lab.location[2] <= 0:
            continue
        u0, v0, u1, v1 = clip_box(lab.box2d, width, height)
        if not (u1 > u0 and v1 > v0):
            logger.debug("object %d lies outside the image, skipped", i)
            continue
        usable.append((i, lab))
    sparse = build_sparse_depth(points, calib, width, height, owner=owner)
    mask = boxes_mask([lab.box2d for _, lab in usable], width, height)
    dense = complete_depth(sparse, r_max=r_max, mask=mask)
    out = []
    for i, lab in usable:
        u, v, z = project_point(calib, lab.center_3d)
        out.append(LabeledObject(i, lab, (u, v), make_depth_grid(dense, lab.box2d, z, m, n)))
    if return_dense:
        return out, dense
    return out
