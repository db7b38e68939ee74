"""KITTI-style AP|R40 evaluation for BEV and 3D detection.

For each (category, difficulty, metric) slice, detections are matched to
ground truth greedily per frame, pooled across frames, and the
interpolated precision is averaged over the recall grid ``k/40``.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Sequence

import numpy as np

from .errors import FrameMismatch
from .geometry import iou_3d, iou_bev
from .kitti_io import ObjectLabel

logger = logging.getLogger(__name__)

N_RECALL = 40
METRICS: Dict[str, Callable] = {"bev": iou_bev, "3d": iou_3d}
DEFAULT_IOU = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
# labels scored as "don't care" for a category, as in the KITTI devkit
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3

    @property
    def title(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class DifficultyThresholds:
    min_height: tuple = (40.0, 25.0, 25.0)
    max_occlusion: tuple = (0, 1, 2)
    max_truncation: tuple = (0.15, 0.30, 0.50)


def assign_difficulty(label: ObjectLabel, thresholds: DifficultyThresholds = DifficultyThresholds()) -> Difficulty:
    """Easiest level whose height, occlusion and truncation limits all hold."""
    height = label.height_2d
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        if (
            height >= thresholds.min_height[level]
            and 0 <= label.occlusion <= thresholds.max_occlusion[level]
            and label.truncation <= thresholds.max_truncation[level]
        ):
            return level
    return Difficulty.IGNORED


@dataclass
class FrameMatch:
    """Outcome of matching one frame.

    ``det_status`` per detection: 1 true positive, 0 false positive,
    -1 ignored (neither). ``gt_matched`` per ground truth box.
    """

    scores: np.ndarray
    det_status: np.ndarray
    gt_matched: np.ndarray
    gt_ignored: np.ndarray

    @property
    def num_gt(self) -> int:
        return int((~self.gt_ignored).sum())


def match_frame(
    dets: Sequence[ObjectLabel],
    gts: Sequence[ObjectLabel],
    iou_fn: Callable,
    threshold: float,
    gt_ignored: Sequence[bool] = None,
) -> FrameMatch:
    """Greedy matching in descending score order.

    Each detection takes the unmatched, non-ignored ground truth with the
    highest IoU at or above ``threshold``. Failing that, a detection that
    overlaps an ignored ground truth is itself ignored; otherwise it is a
    false positive. Equal scores keep input order.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {threshold}")
    ignored = np.zeros(len(gts), dtype=bool) if gt_ignored is None else np.asarray(gt_ignored, dtype=bool)
    scores = np.array([d.score if d.score is not None else 0.0 for d in dets], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    iou = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            iou[i, j] = iou_fn(d, g)
    matched = np.zeros(len(gts), dtype=bool)
    status = np.zeros(len(dets), dtype=np.int8)
    for i in order:
        open_ = (~matched) & (~ignored) & (iou[i] >= threshold)
        if open_.any():
            j = int(np.argmax(np.where(open_, iou[i], -1.0)))
            matched[j] = True
            status[i] = 1
        elif (ignored & (iou[i] >= threshold)).any():
            status[i] = -1
    return FrameMatch(scores, status, matched, ignored)


def precision_at_recalls(scores, is_tp, num_gt: int, n_recall: int = N_RECALL) -> np.ndarray:
    """Interpolated precision at recalls ``k/n_recall`` for ``k = 1..n_recall``.

    The PR curve is evaluated once per distinct score threshold, so ties
    in score are treated as one operating point.
    """
    out = np.zeros(n_recall)
    if num_gt == 0 or len(scores) == 0:
        return out
    scores = np.asarray(scores, dtype=np.float64)
    is_tp = np.asarray(is_tp, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(is_tp[order])
    fp = np.cumsum(~is_tp[order])
    last = np.ones(len(s), dtype=bool)
    last[:-1] = s[1:] != s[:-1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    # running max from the high-recall end
    best = np.maximum.accumulate(precision[::-1])[::-1]
    k = np.arange(1, n_recall + 1)
    # first operating point whose recall reaches k/n, compared in integers
    first = np.searchsorted(tp * n_recall, k * num_gt, side="left")
    reach = first < len(tp)
    out[reach] = best[first[reach]]
    return out


def ap_from_precisions(precisions: np.ndarray) -> float:
    return float(np.mean(precisions)) if len(precisions) else 0.0


@dataclass
class SliceResult:
    ap: float
    precisions: list
    num_gt: int
    num_tp: int
    num_fp: int
    undefined: bool = False


@dataclass
class EvalReport:
    """Results keyed by ``(category, difficulty, metric)``."""

    results: Dict[tuple, SliceResult] = field(default_factory=dict)
    iou_thresholds: Dict[str, float] = field(default_factory=dict)

    def ap(self, category: str, difficulty: str, metric: str) -> float:
        return self.results[(category, difficulty, metric)].ap

    def to_dict(self) -> dict:
        rows = []
        for (cat, diff, metric), r in self.results.items():
            rows.append(
                {
                    "category": cat,
                    "difficulty": diff,
                    "metric": metric,
                    "iou": self.iou_thresholds.get(cat),
                    "ap40": r.ap,
                    "num_gt": r.num_gt,
                    "num_tp": r.num_tp,
                    "num_fp": r.num_fp,
                    "undefined": r.undefined,
                    "precisions": r.precisions,
                }
            )
        return {"recall_points": N_RECALL, "results": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_table(self) -> str:
        header = f"{'category':<12}{'metric':<8}{'IoU':>6}{'Easy':>10}{'Moderate':>10}{'Hard':>10}"
        lines = [header, "-" * len(header)]
        keys = sorted({(c, m) for c, _, m in self.results}, key=lambda cm: (cm[0], cm[1]))
        for cat, metric in keys:
            cells = []
            for diff in ("Easy", "Moderate", "Hard"):
                r = self.results.get((cat, diff, metric))
                cells.append("n/a" if r is None or r.undefined else f"{100.0 * r.ap:.2f}")
            iou = self.iou_thresholds.get(cat, float("nan"))
            lines.append(f"{cat:<12}{metric.upper():<8}{iou:>6.2f}" + "".join(f"{c:>10}" for c in cells))
        return "\n".join(lines) + "\n"


@dataclass
class EvalConfig:
    categories: Sequence[str] = None
    metrics: Sequence[str] = ("bev", "3d")
    iou: Mapping[str, float] = None
    thresholds: DifficultyThresholds = DifficultyThresholds()

    def iou_for(self, category: str) -> float:
        table = dict(DEFAULT_IOU)
        if self.iou:
            table.update(self.iou)
        return table.get(category, 0.5)


def evaluate(
    gt_frames: Mapping[str, Sequence[ObjectLabel]],
    det_frames: Mapping[str, Sequence[ObjectLabel]],
    config: EvalConfig = None,
) -> EvalReport:
    """AP|R40 for every configured category, difficulty and metric.

    The ground-truth set of a slice holds the objects of that difficulty or
    easier; harder or unrated objects and neighbouring classes are ignored.
    Categories default to those present in the ground truth.
    """
    config = config or EvalConfig()
    if set(gt_frames) != set(det_frames):
        missing = sorted(set(gt_frames) ^ set(det_frames))
        raise FrameMismatch(f"frame ids differ between ground truth and detections: {missing[:5]}")
    frame_order = sorted(gt_frames)
    categories = config.categories
    if categories is None:
        categories = sorted({g.category for f in frame_order for g in gt_frames[f] if g.category != "DontCare"})
    report = EvalReport()
    for cat in categories:
        thr = config.iou_for(cat)
        report.iou_thresholds[cat] = thr
        neighbours = NEIGHBOR_CLASSES.get(cat, ())
        for metric in config.metrics:
            iou_fn = METRICS[metric]
            for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
                all_scores, all_tp, num_gt = [], [], 0
                n_fp = 0
                for fid in frame_order:
                    gts = [g for g in gt_frames[fid] if g.category == cat or g.category in neighbours]
                    ignored = [
                        g.category != cat or assign_difficulty(g, config.thresholds) > level for g in gts
                    ]
                    dets = [d for d in det_frames[fid] if d.category == cat]
                    m = match_frame(dets, gts, iou_fn, thr, ignored)
                    keep = m.det_status >= 0
                    all_scores.append(m.scores[keep])
                    all_tp.append(m.det_status[keep] == 1)
                    num_gt += m.num_gt
                    n_fp += int((m.det_status == 0).sum())
                scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
                is_tp = np.concatenate(all_tp) if all_tp else np.zeros(0, dtype=bool)
                prec = precision_at_recalls(scores, is_tp, num_gt)
                report.results[(cat, level.title, metric)] = SliceResult(
                    ap=ap_from_precisions(prec) if num_gt else 0.0,
                    precisions=prec.tolist(),
                    num_gt=num_gt,
                    num_tp=int(is_tp.sum()),
                    num_fp=n_fp,
                    undefined=num_gt == 0,
                )
    return report
