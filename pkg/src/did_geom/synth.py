"""Synthetic scenes with exact ground truth for end-to-end checks.

Boxes stand on a flat ground plane in front of a KITTI-like camera.
Points are drawn uniformly on every vertical face whose outward normal
points towards the camera (negative z component); occlusion between
objects is left to the nearest-depth rule at projection time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence

import numpy as np

from .depth_fusion import U_MIN, InstancePatch
from .depth_labels import DepthGrid, build_sparse_depth, clip_box, generate_labels
from .errors import PlacementFailure
from .geometry import (
    Box3D,
    backproject,
    bev_overlap_area,
    box_faces,
    corners_3d,
    project_points,
    ry_to_alpha,
)
from .kitti_io import CameraCalib, ObjectLabel

KITTI_P2 = (
    (721.5377, 0.0, 609.5593, 44.85728),
    (0.0, 721.5377, 172.854, 0.2163791),
    (0.0, 0.0, 1.0, 0.002745884),
)
CAR_DIMS = ((1.4, 1.7), (1.5, 1.8), (3.5, 4.6))
CAMERA_HEIGHT = 1.65
_FACE_NORMAL_EPS = 1e-9
MAX_RETRIES = 2000


@dataclass
class SceneConfig:
    """Knobs of :func:`generate_scene`.

    ``dims`` maps a category to ``((h_lo, h_hi), (w_lo, w_hi), (l_lo, l_hi))``;
    ``categories`` lists which of them to draw from. A degenerate range
    (``lo == hi``) fixes the value.
    """

    seed: int = 0
    num_objects: int = 5
    depth_range: tuple = (10.0, 45.0)
    dims: Dict[str, tuple] = field(default_factory=lambda: {"Car": CAR_DIMS})
    categories: Sequence[str] = ("Car",)
    yaw_range: tuple = (-math.pi, math.pi)
    image_size: tuple = (1242, 375)
    calib: CameraCalib = field(default_factory=lambda: CameraCalib(P=KITTI_P2))
    point_density: float = 400.0
    noise: tuple = (0.0, 0.0)
    ground_y: float = CAMERA_HEIGHT

    def __post_init__(self):
        ranges = [self.depth_range, self.yaw_range] + [r for c in self.categories for r in self.dims[c]]
        for lo, hi in ranges:
            if not lo <= hi:
                raise ValueError(f"empty range ({lo}, {hi})")
        if not self.point_density > 0:
            raise ValueError("point density must be positive")
        if self.depth_range[0] <= 0:
            raise ValueError("depth range must be positive")
        if self.num_objects < 0:
            raise ValueError("num_objects must be non-negative")


@dataclass
class Scene:
    """Ground truth of one synthetic frame.

    ``points`` is ``(N, 4)`` in the camera frame, ``owner`` gives the
    label index that produced each point.
    """

    calib: CameraCalib
    width: int
    height: int
    labels: list
    points: np.ndarray
    owner: np.ndarray
    config: Optional[SceneConfig] = None


def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _fully_in_image(calib, box, width, height) -> bool:
    corners = corners_3d(box)
    if not (corners[:, 2] > 0.5).all():
        return False
    uv, _, _ = project_points(calib, corners)
    return bool(((uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)).all())


def camera_facing_faces(box) -> list:
    """Vertical faces whose outward normal has a negative z component."""
    return [(idx, n) for idx, n in box_faces(box) if n[2] < -_FACE_NORMAL_EPS]


def sample_surface_points(boxes: Sequence, density: float, rng: np.random.Generator):
    """Uniform samples on the camera-facing faces; returns ``(points, owner)``."""
    chunks, owners = [], []
    for k, box in enumerate(boxes):
        corners = corners_3d(box)
        for (i, j, _, ti), _n in camera_facing_faces(box):
            a, b, top = corners[i], corners[j], corners[ti]
            along, up = b - a, top - a
            area = float(np.linalg.norm(along) * np.linalg.norm(up))
            count = max(int(round(density * area)), 1)
            st = rng.uniform(0.0, 1.0, size=(count, 2))
            xyz = a + st[:, :1] * along + st[:, 1:] * up
            refl = rng.uniform(0.0, 1.0, size=(count, 1))
            chunks.append(np.hstack([xyz, refl]))
            owners.append(np.full(count, k, dtype=np.int64))
    if not chunks:
        return np.zeros((0, 4)), np.zeros(0, dtype=np.int64)
    return np.vstack(chunks), np.concatenate(owners)


def _occlusion_levels(calib, width, height, points, owner, n_objects) -> list:
    sparse = build_sparse_depth(points, calib, width, height, owner=owner)
    won = np.bincount(sparse.owner[sparse.owner >= 0], minlength=n_objects) if len(sparse) else np.zeros(n_objects)
    levels = []
    for k in range(n_objects):
        own = build_sparse_depth(points[owner == k], calib, width, height)
        frac = won[k] / len(own) if len(own) else 0.0
        levels.append(0 if frac >= 0.8 else 1 if frac >= 0.5 else 2 if frac > 0 else 3)
    return levels


def _make_labels(calib, width, height, specs, points, owner) -> list:
    """Labels from ``(category, Box3D)`` specs; boxes clipped to the image."""
    occ = _occlusion_levels(calib, width, height, points, owner, len(specs))
    labels = []
    for k, (cat, box) in enumerate(specs):
        uv, _, _ = project_points(calib, corners_3d(box))
        full = (uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max())
        clipped = clip_box(full, width, height)
        area = (full[2] - full[0]) * (full[3] - full[1])
        inside = max(clipped[2] - clipped[0], 0.0) * max(clipped[3] - clipped[1], 0.0)
        x, _, z = box.location
        labels.append(
            ObjectLabel(
                category=cat,
                truncation=float(1.0 - inside / area),
                occlusion=occ[k],
                alpha=ry_to_alpha(box.ry, x, z),
                box2d=clipped,
                dims=box.dims,
                location=box.location,
                ry=box.ry,
            )
        )
    return labels


def generate_scene(cfg: SceneConfig) -> Scene:
    """Rejection-sample BEV-disjoint boxes that project fully into the image."""
    rng = np.random.default_rng(cfg.seed)
    calib, (width, height) = cfg.calib, cfg.image_size
    specs = []
    for _ in range(cfg.num_objects):
        for _attempt in range(MAX_RETRIES):
            cat = cfg.categories[int(rng.integers(len(cfg.categories)))]
            h, w, l = (_uniform(rng, r) for r in cfg.dims[cat])
            z = _uniform(rng, cfg.depth_range)
            u = float(rng.uniform(0.0, width))
            ry = _uniform(rng, cfg.yaw_range)
            x, _, _ = backproject(calib, u, calib.c_v, z)
            box = Box3D(location=(x, cfg.ground_y, z), dims=(h, w, l), ry=ry)
            if not _fully_in_image(calib, box, width, height):
                continue
            if any(bev_overlap_area(box, other) > 0.0 for _, other in specs):
                continue
            specs.append((cat, box))
            break
        else:
            raise PlacementFailure(f"could not place object {len(specs)} after {MAX_RETRIES} tries")
    points, owner = sample_surface_points([b for _, b in specs], cfg.point_density, rng)
    labels = _make_labels(calib, width, height, specs, points, owner)
    return Scene(calib, width, height, labels, points, owner, cfg)


def zoom_scene(scene: Scene, s: float, seed: int = 0) -> Scene:
    """Move every object along its centre ray so its nearest corner sits at ``1/s`` the depth.

    Object sizes stay fixed, so each object appears ``s`` times larger,
    which is what an image up-scaling by ``s`` shows. Surface points are
    resampled at the original density.
    """
    specs = []
    for lab in scene.labels:
        box = Box3D(lab.location, lab.dims, lab.ry)
        cx, cy, cz = lab.center_3d
        near = float(corners_3d(box)[:, 2].min())
        lam = (near / s - near + cz) / cz
        x, y, z = lab.location
        moved = Box3D((x + (lam - 1.0) * cx, y + (lam - 1.0) * cy, z + (lam - 1.0) * cz), lab.dims, lab.ry)
        specs.append((lab.category, moved))
    density = scene.config.point_density if scene.config else SceneConfig().point_density
    rng = np.random.default_rng(seed)
    points, owner = sample_surface_points([b for _, b in specs], density, rng)
    labels = _make_labels(scene.calib, scene.width, scene.height, specs, points, owner)
    return replace(scene, labels=labels, points=points, owner=owner)


def perfect_detections(scene: Scene) -> list:
    return [lab.with_score(1.0) for lab in scene.labels]


def scene_labels(scene: Scene, grid: tuple = (7, 7), r_max: float = 50.0, return_dense: bool = False):
    """Depth grids for every object of a scene, with point ownership tracked."""
    return generate_labels(
        scene.calib,
        scene.width,
        scene.height,
        scene.points,
        scene.labels,
        grid=grid,
        r_max=r_max,
        owner=scene.owner,
        return_dense=return_dense,
    )


def noisy_patch(grid: DepthGrid, b_vis, b_att, rng: np.random.Generator) -> InstancePatch:
    """Perturb clean labels with Laplace noise; uncertainties are the true scales.

    ``b_vis`` and ``b_att`` may be scalars or per-cell arrays. Scales
    below ``U_MIN`` (zero included) are reported as ``U_MIN``.
    """
    shape = grid.visual.shape
    b_vis = np.broadcast_to(np.asarray(b_vis, dtype=np.float64), shape)
    b_att = np.broadcast_to(np.asarray(b_att, dtype=np.float64), shape)
    if np.any(b_vis < 0) or np.any(b_att < 0):
        raise ValueError("noise scales must be non-negative")
    d_vis = grid.visual + b_vis * rng.laplace(0.0, 1.0, shape)
    d_att = grid.attribute + b_att * rng.laplace(0.0, 1.0, shape)
    return InstancePatch(d_vis, np.maximum(b_vis, U_MIN), d_att, np.maximum(b_att, U_MIN), grid.valid.copy())


def noisy_patches(scene: Scene, noise: tuple = None, seed: int = 0, labeled=None, grid: tuple = (7, 7)) -> list:
    """One :class:`InstancePatch` per labelled object of the scene."""
    if noise is None:
        noise = scene.config.noise if scene.config else (0.0, 0.0)
    b_vis, b_att = noise
    if labeled is None:
        labeled = scene_labels(scene, grid=grid)
    rng = np.random.default_rng(seed)
    return [noisy_patch(obj.grid, b_vis, b_att, rng) for obj in labeled]
