"""
Affine augmentation keeps depth labels consistent
=================================================

Scaling an image by s makes every object look s times closer, so the
visual depth must shrink by s while the attribute depth (an object
property) stays put. We check that against a scene where the objects are
physically moved closer.
"""

# %%
import math

import numpy as np

from did_geom.augmentation import AffineTransform2D, horizontal_flip, make_crop_scale, transform_object
from did_geom.bundle import Frame
from did_geom.depth_labels import grid_ownership
from did_geom.synth import SceneConfig, generate_scene, scene_labels, zoom_scene

cfg = SceneConfig(seed=1, num_objects=2, depth_range=(20.0, 35.0), yaw_range=(-math.pi / 2, -math.pi / 2))
scene = generate_scene(cfg)
objects, dense = scene_labels(scene, return_dense=True)

# %%
# A random crop-and-scale, as drawn during training
t = make_crop_scale(seed=0, width=scene.width, height=scene.height)
print(f"s_x={t.s_x:.3f}  s_y={t.s_y:.3f}")
obj = objects[0]
out = transform_object(obj, t, min_visible=0.0)
print("box before", np.round(obj.label.box2d, 1), "after", np.round(out.label.box2d, 1))
print("visual ratio:", np.nanmean(obj.grid.visual / out.grid.visual))
print("attribute unchanged:", np.array_equal(obj.grid.attribute, out.grid.attribute, equal_nan=True))

# %%
# Zoom by 2 about the object's projected centre, then compare with a
# scene where the object really is twice as close.
s = 2.0
zoomed = zoom_scene(scene, s)
z_objects, z_dense = scene_labels(zoomed, return_dense=True)
for a, b in zip(objects, z_objects):
    pure_a = (grid_ownership(dense, a.label.box2d, a.index) == 1.0) & a.grid.valid
    pure_b = (grid_ownership(z_dense, b.label.box2d, b.index) == 1.0) & b.grid.valid
    if not (pure_a.any() and pure_b.any()):
        continue
    t = AffineTransform2D.scale_about(s, s, *a.center_proj)
    predicted = transform_object(a, t).grid.visual[pure_a].mean()
    rendered = b.grid.visual[pure_b].mean()
    print(f"object {a.index}: predicted {predicted:.6f} m, re-rendered {rendered:.6f} m")

# %%
# Horizontal flip mirrors boxes and grids; flipping twice is the identity.
frame = Frame("000000", scene.width, scene.height, objects, calib=scene.calib)
once = horizontal_flip(frame)
twice = horizontal_flip(once)
print("ry:", [round(o.label.ry, 3) for o in frame.objects], "->", [round(o.label.ry, 3) for o in once.objects])
print("back after two flips:", all(
    np.allclose(a.label.box2d, b.label.box2d) and np.array_equal(a.grid.visual, b.grid.visual, equal_nan=True)
    for a, b in zip(twice.objects, frame.objects)
))
