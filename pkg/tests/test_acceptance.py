"""Acceptance suite: one test per headline criterion.

Each check returns ``(passed, detail)``; the pytest wrapper records the
outcome and ``conftest.py`` prints one PASS/FAIL line per criterion at the
end of the run. ``python tests/test_acceptance.py`` prints the same lines
without pytest.
"""

import logging
import math
import random
import struct
import sys
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from did_geom.augmentation import (
    AffineTransform2D,
    horizontal_flip,
    make_crop_scale,
    transform_object,
)
from did_geom.bundle import Frame
from did_geom.depth_fusion import (
    InstancePatch,
    aggregate_depth,
    fuse,
    gradcheck,
    instance_confidence,
)
from did_geom.depth_labels import grid_ownership
from did_geom.evaluation import EvalConfig, evaluate
from did_geom.geometry import Box3D, bev_polygon, iou_3d, iou_bev
from did_geom.kitti_io import (
    CameraCalib,
    ObjectLabel,
    format_calibration,
    parse_calibration,
    parse_label_line,
    read_point_cloud,
    serialize_detection,
    serialize_label,
    write_point_cloud,
)
from did_geom.synth import (
    SceneConfig,
    generate_scene,
    noisy_patch,
    perfect_detections,
    scene_labels,
    zoom_scene,
)

RESULTS = {}


def record(key, title, passed, detail):
    RESULTS[key] = (title, passed, detail)
    return passed


# 1 -----------------------------------------------------------------------------


def check_fusion_identities(n=100_000, seed=0):
    rng = np.random.default_rng(seed)
    d_vis, d_att = rng.uniform(1, 80, n), rng.uniform(-3, 3, n)
    u_vis, u_att = rng.uniform(1e-3, 5, n), rng.uniform(1e-3, 5, n)
    start = time.perf_counter()
    d, u = fuse(d_vis, u_vis, d_att, u_att)
    elapsed = time.perf_counter() - start
    err_u = float(np.max(np.abs(u**2 - (u_vis**2 + u_att**2))))
    err_d = float(np.max(np.abs(d - (d_vis + d_att))))
    ok = err_u <= 1e-12 and err_d <= 1e-12 and elapsed < 1.0
    return ok, f"max |u^2 err| {err_u:.1e}, max |d err| {err_d:.1e}, {elapsed * 1e3:.1f} ms"


# 2 -----------------------------------------------------------------------------


def loop_oracle(d, p, valid):
    num = den = sq = 0.0
    rows, cols = d.shape
    for i in range(rows):
        for j in range(cols):
            if valid[i, j]:
                num += d[i, j] * p[i, j]
                den += p[i, j]
                sq += p[i, j] * p[i, j]
    return num / den, sq / den


def check_aggregation_oracle(n=10_000, seed=1):
    rng = np.random.default_rng(seed)
    worst_d = worst_p = 0.0
    uniform_ok = True
    for k in range(n):
        shape = tuple(int(v) for v in rng.integers(1, 8, size=2))
        valid = rng.uniform(size=shape) < rng.uniform(0.2, 1.0)
        valid.flat[rng.integers(valid.size)] = True
        d_vis, d_att = rng.uniform(5, 60, shape), rng.uniform(-2, 2, shape)
        if k % 10 == 0:
            u_vis = np.full(shape, rng.uniform(0.01, 3))
            u_att = np.full(shape, rng.uniform(0.01, 3))
        else:
            u_vis, u_att = rng.uniform(0.01, 3, shape), rng.uniform(0.01, 3, shape)
        patch = InstancePatch(d_vis, u_vis, d_att, u_att, valid)
        got_d, got_p = aggregate_depth(patch), instance_confidence(patch)
        want_d, want_p = loop_oracle(patch.d_ins, patch.prob, valid)
        worst_d = max(worst_d, abs(got_d - want_d))
        worst_p = max(worst_p, abs(got_p - want_p))
        if k % 10 == 0:
            p0 = patch.prob.flat[0]
            uniform_ok &= got_d == float(np.mean(patch.d_ins[valid])) and got_p == p0
    ok = worst_d <= 1e-12 and worst_p <= 1e-12 and uniform_ok
    return ok, f"max depth err {worst_d:.1e}, max conf err {worst_p:.1e}, uniform exact: {uniform_ok}"


# 3 -----------------------------------------------------------------------------


def check_gradients():
    rep = gradcheck(samples=1000, seed=0, h=1e-6)
    worst = max(rep["laplace_dd"], rep["laplace_du"], rep["smooth_l1"])
    ok = worst <= 1e-5 and rep["stationary_du"] <= 1e-12
    return ok, f"max rel err {worst:.1e}, dL/du at u* {rep['stationary_du']:.1e}"


# 4 -----------------------------------------------------------------------------


def _frame_for(seed):
    scene = generate_scene(SceneConfig(seed=seed, num_objects=5))
    return Frame(f"{seed:06d}", scene.width, scene.height, scene_labels(scene), calib=scene.calib)


def _random_affine(rng, width, height):
    """A crop/scale draw, an anisotropic axis-aligned map, or a general map."""
    kind = rng.integers(3)
    if kind == 0:
        return make_crop_scale(rng, width, height, (0.5, 2.0), 0.2)
    if kind == 1:
        sx, sy = rng.uniform(0.5, 2.0, 2)
        return AffineTransform2D([[sx, 0.0, rng.uniform(-100, 100)], [0.0, sy, rng.uniform(-50, 50)]], (width, height))
    while True:
        A = rng.uniform(-0.4, 0.4, (2, 2)) + np.diag(rng.uniform(0.6, 1.6, 2))
        if np.linalg.det(A) > 0.1:
            break
    b = rng.uniform(-100, 100, 2)
    return AffineTransform2D(np.hstack([A, b[:, None]]), (width, height))


def _axis_aligned(t):
    return t.matrix[0, 1] == 0.0 and t.matrix[1, 0] == 0.0


def _fields_close(a, b, tol):
    return (
        np.allclose(a.label.box2d, b.label.box2d, rtol=0, atol=tol)
        and np.allclose(a.center_proj, b.center_proj, rtol=0, atol=tol)
        and np.array_equal(a.grid.valid, b.grid.valid)
        and np.allclose(a.grid.visual, b.grid.visual, rtol=tol, atol=0, equal_nan=True)
        and a.grid.attribute.tobytes() == b.grid.attribute.tobytes()
        and a.label.dims == b.label.dims
    )


def check_augmentation_laws(n=1000, seed=4):
    # many maps are deliberately anisotropic; their warnings are expected
    log = logging.getLogger("did_geom.augmentation")
    level = log.level
    log.setLevel(logging.ERROR)
    try:
        return _augmentation_laws(n, seed)
    finally:
        log.setLevel(level)


def _augmentation_laws(n, seed):
    rng = np.random.default_rng(seed)
    frames = [_frame_for(s) for s in range(100, 104)]
    invariant_ok, compose_ok = True, True
    worst_scale = 0.0
    composed = 0
    for k in range(n):
        frame = frames[k % len(frames)]
        t1 = _random_affine(rng, frame.width, frame.height)
        t2 = _random_affine(rng, frame.width, frame.height)
        for obj in frame.objects:
            out = transform_object(obj, t1, min_visible=0.0)
            g, h = obj.grid, out.grid
            invariant_ok &= h.attribute.tobytes() == g.attribute.tobytes()
            invariant_ok &= out.label.dims == obj.label.dims and out.label.alpha == obj.label.alpha
            rel = np.abs(h.visual[g.valid] * t1.s_y - g.visual[g.valid]) / g.visual[g.valid]
            worst_scale = max(worst_scale, float(rel.max()) if rel.size else 0.0)
            # boxes stay axis-aligned, so composition is exact only for
            # maps without rotation or shear (the crop/scale family)
            if _axis_aligned(t1) and _axis_aligned(t2):
                both = transform_object(obj, t2 @ t1, min_visible=0.0)
                step = transform_object(out, t2, min_visible=0.0)
                compose_ok &= _fields_close(both, step, 1e-9)
                composed += 1
    flip_ok = True
    for frame in frames:
        twice = horizontal_flip(horizontal_flip(frame))
        for a, b in zip(twice.objects, frame.objects):
            flip_ok &= _fields_close(a, b, 1e-9) and a.label.location == b.label.location
            flip_ok &= abs(math.remainder(a.label.ry - b.label.ry, 2 * math.pi)) <= 1e-12
            flip_ok &= abs(math.remainder(a.label.alpha - b.label.alpha, 2 * math.pi)) <= 1e-12
    ok = invariant_ok and worst_scale <= 1e-12 and compose_ok and composed > 0 and flip_ok
    detail = (
        f"{n} transforms: invariants {invariant_ok}, max rel |visual' s_y - visual| {worst_scale:.1e}, "
        f"composition {compose_ok} ({composed} axis-aligned object pairs), flip involution {flip_ok}"
    )
    return ok, detail


# 5 -----------------------------------------------------------------------------


def _front_face_cells(scene):
    """Per object, the visual depths of cells filled only by its own points."""
    objs, dense = scene_labels(scene, return_dense=True)
    out = {}
    for obj in objs:
        pure = (grid_ownership(dense, obj.label.box2d, obj.index) == 1.0) & obj.grid.valid
        if pure.any():
            out[obj.index] = (obj, pure)
    return out


def check_zoom_consistency(seeds=(0, 1, 2, 3), scales=(0.8, 1.5, 2.0)):
    worst, compared = 0.0, 0
    for seed in seeds:
        cfg = SceneConfig(seed=seed, num_objects=3, depth_range=(18.0, 40.0), yaw_range=(-math.pi / 2, -math.pi / 2))
        scene = generate_scene(cfg)
        base = _front_face_cells(scene)
        for s in scales:
            zoomed = _front_face_cells(zoom_scene(scene, s, seed=seed))
            for idx, (obj, pure) in base.items():
                if idx not in zoomed:
                    continue
                u, v = obj.center_proj
                t = AffineTransform2D.scale_about(s, s, u, v)
                predicted = transform_object(obj, t).grid.visual[pure]
                zobj, zpure = zoomed[idx]
                rendered = zobj.grid.visual[zpure]
                worst = max(worst, float(np.max(np.abs(rendered[:, None] - predicted[None, :]))))
                compared += 1
    ok = compared > 0 and worst <= 1e-6
    return ok, f"{compared} object/scale pairs, max |rendered - transformed| {worst:.1e} m"


# 6 -----------------------------------------------------------------------------


def check_label_round_trip(n=50):
    start = time.perf_counter()
    worst_rt, worst_half, cells, halves = 0.0, 0.0, 0, 0
    for seed in range(n):
        scene = generate_scene(SceneConfig(seed=seed, num_objects=5))
        for obj in scene_labels(scene):
            g = obj.grid
            gt_depth = obj.label.center_3d[2]
            err = np.abs(g.visual + g.attribute - gt_depth)[g.valid]
            worst_rt = max(worst_rt, float(err.max()) if err.size else 0.0)
            cells += int(g.valid.sum())
        # camera-facing length axis: the front face is the end face of the box
        facing = generate_scene(SceneConfig(seed=seed, num_objects=5, yaw_range=(-math.pi / 2, -math.pi / 2)))
        for obj, pure in _front_face_cells(facing).values():
            err = abs(float(np.mean(obj.grid.attribute[pure])) - obj.label.dims[2] / 2)
            worst_half = max(worst_half, err)
            halves += 1
    elapsed = time.perf_counter() - start
    ok = worst_rt <= 1e-9 and worst_half <= 1e-3 and halves > 0 and elapsed < 30.0
    detail = (
        f"{cells} cells max round-trip err {worst_rt:.1e} m; {halves} objects max |mean att - l/2| "
        f"{worst_half:.1e} m; {elapsed:.1f} s"
    )
    return ok, detail


# 7 -----------------------------------------------------------------------------


def check_aggregation_benefit(trials=10_000, ratios=(1.0, 2.0, 4.0, 8.0), b0=0.5, seed=7):
    from did_geom.depth_labels import DepthGrid

    grid = DepthGrid(np.full((7, 7), 18.0), np.full((7, 7), 2.0), np.ones((7, 7), dtype=bool), 20.0)
    rng = np.random.default_rng(seed)
    rows, ok = [], True
    for r in ratios:
        err_w = err_m = 0.0
        for _ in range(trials):
            scale = np.where(rng.uniform(size=(7, 7)) < 0.5, b0, r * b0)
            patch = noisy_patch(grid, scale, scale, rng)
            err_w += abs(aggregate_depth(patch) - 20.0)
            err_m += abs(float(np.mean(patch.d_ins)) - 20.0)
        err_w, err_m = err_w / trials, err_m / trials
        ok &= err_w <= err_m + 1e-12 and (r < 4 or err_w < err_m)
        rows.append(f"{r:g}x: {err_w:.4f} vs {err_m:.4f}")
    return ok, "weighted vs mean MAE (m) " + ", ".join(rows)


# 8 -----------------------------------------------------------------------------


def mc_iou(a, b, n, rng):
    pa, pb = bev_polygon(a), bev_polygon(b)
    lo, hi = np.minimum(pa.min(0), pb.min(0)), np.maximum(pa.max(0), pb.max(0))
    pts = rng.uniform(lo, hi, size=(n, 2))

    def inside(poly):
        ok = np.ones(n, dtype=bool)
        for i in range(4):
            p, q = poly[i], poly[(i + 1) % 4]
            ok &= (q[0] - p[0]) * (pts[:, 1] - p[1]) - (q[1] - p[1]) * (pts[:, 0] - p[0]) >= 0
        return ok

    ia, ib = inside(pa), inside(pb)
    return float((ia & ib).sum() / (ia | ib).sum())


def check_rotated_iou(pairs=100, samples=1_000_000, seed=8):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        boxes = [
            Box3D((rng.uniform(-1, 1), 1.65, rng.uniform(19, 21)),
                  (1.5, rng.uniform(0.8, 2.0), rng.uniform(1.0, 4.5)), rng.uniform(-math.pi, math.pi))
            for _ in range(2)
        ]
        worst = max(worst, abs(iou_bev(*boxes) - mc_iou(*boxes, samples, rng)))
    a = Box3D((0.0, 1.0, 10.0), (1.0, 1.0, 1.0), 0.0)
    half = Box3D((0.5, 1.0, 10.0), (1.0, 1.0, 1.0), 0.0)
    far = Box3D((50.0, 1.0, 10.0), (1.0, 1.0, 1.0), 0.0)
    spun = Box3D((3.0, 1.6, 22.0), (1.5, 1.7, 4.2), 0.77)
    analytic = [
        abs(iou_bev(a, a) - 1.0), abs(iou_3d(a, a) - 1.0), abs(iou_bev(spun, spun) - 1.0),
        abs(iou_bev(a, half) - 1 / 3), abs(iou_3d(a, half) - 1 / 3),
        abs(iou_bev(a, far)), abs(iou_3d(a, far)),
    ]
    ok = worst <= 1e-2 and max(analytic) <= 1e-12
    return ok, f"max |IoU - MC| over {pairs} pairs {worst:.1e}; analytic max err {max(analytic):.1e}"


# 9 -----------------------------------------------------------------------------


def oracle_ap(frames, iou_thr, n=40):
    """Greedy matching plus exact PR integration, all in plain Python."""
    pool, num_gt = [], 0
    for gts, dets in frames:
        num_gt += len(gts)
        taken = [False] * len(gts)
        order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
        for i in order:
            best, best_j = -1.0, None
            for j, g in enumerate(gts):
                ov = iou_bev(dets[i], g)
                if not taken[j] and ov >= iou_thr and ov > best:
                    best, best_j = ov, j
            if best_j is not None:
                taken[best_j] = True
            pool.append((dets[i].score, best_j is not None))
    if num_gt == 0:
        return 0.0
    points = []
    for t in sorted({s for s, _ in pool}, reverse=True):
        tp = sum(1 for s, ok in pool if s >= t and ok)
        fp = sum(1 for s, ok in pool if s >= t and not ok)
        points.append((Fraction(tp, num_gt), Fraction(tp, tp + fp)))
    total = sum(
        (max((p for r, p in points if r >= Fraction(k, n)), default=Fraction(0)) for k in range(1, n + 1)),
        Fraction(0),
    )
    return float(total / n)


def _easy_car(x, z, l, ry, score=None):
    return ObjectLabel("Car", 0.0, 0, 0.0, (100.0, 100.0, 160.0, 180.0), (1.5, 1.6, l), (x, 1.65, z), ry, score)


def _random_instance(rng):
    frames = {}
    n_det_total = 0
    for f in range(rng.randint(1, 3)):
        gts = [_easy_car(6.0 * i, 20.0 + rng.uniform(-3, 3), rng.uniform(3.0, 4.5), rng.uniform(-0.3, 0.3))
               for i in range(rng.randint(0, 4))]
        dets = []
        budget = max(0, 20 - n_det_total)
        for _ in range(min(budget, rng.randint(0, 7))):
            if gts and rng.random() < 0.7:
                g = rng.choice(gts)
                dets.append(_easy_car(g.location[0] + rng.gauss(0, 0.4), g.location[2] + rng.gauss(0, 0.4),
                                      g.dims[2], g.ry, round(rng.random(), rng.choice([1, 3]))))
            else:
                dets.append(_easy_car(rng.uniform(-5, 25), rng.uniform(15, 25), 4.0, 0.0, round(rng.random(), 2)))
        n_det_total += len(dets)
        frames[f"{f:06d}"] = (gts, dets)
    return frames


def check_ap40(instances=100, seed=9):
    scenes = [generate_scene(SceneConfig(seed=s, num_objects=5)) for s in range(200, 205)]
    gt = {f"{i:06d}": sc.labels for i, sc in enumerate(scenes)}
    det = {f"{i:06d}": perfect_detections(sc) for i, sc in enumerate(scenes)}
    rep = evaluate(gt, det)
    perfect_ok = all(r.ap == 1.0 for r in rep.results.values()) and len(rep.results) == 6

    rng = random.Random(seed)
    cfg = EvalConfig(categories=["Car"], metrics=("bev",))
    worst, rescale_ok = 0.0, True
    for _ in range(instances):
        frames = _random_instance(rng)
        gts = {k: v[0] for k, v in frames.items()}
        dets = {k: v[1] for k, v in frames.items()}
        got = evaluate(gts, dets, cfg).results[("Car", "Easy", "bev")]
        want = oracle_ap(list(frames.values()), 0.7)
        worst = max(worst, abs(got.ap - want))
        squashed = {k: [d.with_score(1 / (1 + math.exp(-5 * d.score))) for d in v] for k, v in dets.items()}
        again = evaluate(gts, squashed, cfg).results[("Car", "Easy", "bev")]
        rescale_ok &= again.precisions == got.precisions
    ok = perfect_ok and worst <= 1e-12 and rescale_ok
    return ok, f"perfect {perfect_ok}; max |AP - oracle| {worst:.1e} on {instances} sets; rescale invariant {rescale_ok}"


# 10 ----------------------------------------------------------------------------


def _random_label(rng):
    r2 = lambda lo, hi: round(rng.uniform(lo, hi), 2)  # noqa: E731
    u0, v0 = r2(0, 1000), r2(0, 300)
    return ObjectLabel(
        category=rng.choice(["Car", "Pedestrian", "Cyclist", "Van"]),
        truncation=r2(0, 1),
        occlusion=rng.randint(0, 3),
        alpha=r2(-3.14, 3.14),
        box2d=(u0, v0, round(u0 + rng.uniform(1, 200), 2), round(v0 + rng.uniform(1, 70), 2)),
        dims=(r2(0.5, 4), r2(0.5, 3), r2(0.5, 12)),
        location=(r2(-40, 40), r2(-2, 3), r2(0.5, 80)),
        ry=r2(-3.14, 3.14),
        score=r2(0, 1),
    )


def check_format_fidelity(n=10_000, seed=10):
    rng = random.Random(seed)
    nrng = np.random.default_rng(seed)
    label_ok = True
    for _ in range(n):
        lab = _random_label(rng)
        line = serialize_detection(lab)
        back = parse_label_line(line)
        label_ok &= back == lab and serialize_detection(back) == line
        gt = replace(lab, score=None)
        gt_line = serialize_label(gt)
        label_ok &= len(gt_line.split()) == 15 and parse_label_line(gt_line) == gt
    calib_ok = True
    for _ in range(n):
        P = nrng.normal(0, 100, (3, 4))
        P[0, 0], P[1, 1] = nrng.uniform(100, 2000, 2)
        c = CameraCalib(P=P)
        text = format_calibration(c)
        back = parse_calibration(text)
        calib_ok &= np.array_equal(back.P, c.P) and format_calibration(back) == text
    cloud_ok = True
    for _ in range(n):
        pts = nrng.normal(0, 20, (int(nrng.integers(0, 50)), 4)).astype(np.float32)
        data = write_point_cloud(pts)
        cloud_ok &= read_point_cloud(data).tobytes() == pts.tobytes() and data == pts.astype("<f4").tobytes()
        cloud_ok &= len(data) == struct.calcsize(f"<{4 * len(pts)}f")
    ok = label_ok and calib_ok and cloud_ok
    return ok, f"{n} each: label lines {label_ok}, calib files {calib_ok}, point clouds {cloud_ok}"


CRITERIA = [
    ("C01", "fusion identities", check_fusion_identities),
    ("C02", "aggregation vs loop oracle", check_aggregation_oracle),
    ("C03", "gradient check", check_gradients),
    ("C04", "augmentation laws", check_augmentation_laws),
    ("C05", "augmentation-geometry consistency", check_zoom_consistency),
    ("C06", "label round trip", check_label_round_trip),
    ("C07", "aggregation benefit", check_aggregation_benefit),
    ("C08", "rotated IoU", check_rotated_iou),
    ("C09", "AP40", check_ap40),
    ("C10", "format fidelity", check_format_fidelity),
]


@pytest.mark.parametrize("key, title, check", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(key, title, check):
    passed, detail = check()
    record(key, title, passed, detail)
    print(f"{'PASS' if passed else 'FAIL'} {key} {title}: {detail}")
    assert passed, detail


if __name__ == "__main__":
    failures = 0
    for key, title, check in CRITERIA:
        passed, detail = check()
        failures += not passed
        print(f"{'PASS' if passed else 'FAIL'} {key} {title}: {detail}", flush=True)
    sys.exit(1 if failures else 0)
