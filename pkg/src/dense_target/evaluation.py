"""COCO-style single-class detection metrics: AP, AP.50, AP.75, AR300, AR300.50.

Differences from the COCO toolkit, all deliberate:

* detections sharing a score are resolved as one block, so the
  precision/recall curve does not depend on image or input order;
* recall thresholds are compared in exact integer arithmetic
  (``100 * tp >= k * n_gt``);
* IoU ties during matching go to the lowest gt index.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ImageIdMismatch, UnsortedInput
from .geometry import iou_matrix
from .postprocess import sort_order

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_STEPS = 100
CSV_HEADER = "ap,ap50,ap75,ar300,ar300_50"


def match_detections(det_boxes, det_scores, gt_boxes, iou_thresh: float) -> np.ndarray:
    """Greedy matching; entry ``k`` is the gt index claimed by detection ``k`` or -1.

    Detections must already be in descending score order. Each detection
    claims the unclaimed gt with the highest IoU, provided it is at least
    ``iou_thresh``.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    det_scores = np.asarray(det_scores, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if np.any(np.diff(det_scores) > 0):
        raise UnsortedInput("detections must be sorted by descending score")
    matches = np.full(len(det_boxes), -1, dtype=np.int64)
    if not len(det_boxes) or not len(gt_boxes):
        return matches
    ious = iou_matrix(det_boxes, gt_boxes)
    free = np.ones(len(gt_boxes), dtype=bool)
    for d in range(len(det_boxes)):
        cand = np.where(free & (ious[d] >= iou_thresh), ious[d], -1.0)
        g = int(np.argmax(cand))
        if cand[g] >= 0:
            matches[d] = g
            free[g] = False
    return matches


def _curve_points(scores: np.ndarray, tp: np.ndarray):
    """Cumulative (tp, fp) counts at the end of each equal-score block."""
    if not len(scores):
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = tp[order].astype(np.int64)
    ctp = np.cumsum(t)
    cfp = np.cumsum(1 - t)
    ends = np.append(np.flatnonzero(s[1:] != s[:-1]), len(s) - 1)
    return ctp[ends], cfp[ends]


def average_precision(scores, is_tp, n_gt: int) -> float | None:
    """101-point interpolated AP over globally pooled detections.

    Returns ``None`` when ``n_gt == 0`` (the class is excluded from averaging).
    """
    if n_gt == 0:
        return None
    scores = np.asarray(scores, dtype=np.float64)
    ctp, cfp = _curve_points(scores, np.asarray(is_tp, dtype=bool))
    if not len(ctp):
        return 0.0
    precision = ctp / (ctp + cfp)
    # envelope from the right: best precision at or beyond each point
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for k in range(RECALL_STEPS + 1):
        reach = np.flatnonzero(RECALL_STEPS * ctp >= k * n_gt)
        if reach.size:
            total += envelope[reach[0]]
    return total / (RECALL_STEPS + 1)


@dataclass
class MetricsReport:
    ap: float
    ap50: float
    ap75: float
    ar300: float
    ar300_50: float
    per_threshold: list = field(default_factory=list)

    def csv_row(self) -> str:
        return ",".join(f"{v:.6f}" for v in (self.ap, self.ap50, self.ap75, self.ar300, self.ar300_50))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, json_path=None, csv_path=None) -> None:
        if json_path:
            with open(json_path, "w") as fh:
                fh.write(self.to_json() + "\n")
        if csv_path:
            with open(csv_path, "w") as fh:
                fh.write(CSV_HEADER + "\n" + self.csv_row() + "\n")


def _group_detections(dets) -> dict:
    if isinstance(dets, dict):
        return {k: (np.asarray(b, dtype=np.float64).reshape(-1, 4), np.asarray(s, dtype=np.float64))
                for k, (b, s) in dets.items()}
    grouped: dict = {}
    for d in dets:
        grouped.setdefault(d.image_id, []).append(d)
    return {k: (np.array([d.box.as_list() for d in v], dtype=np.float64).reshape(-1, 4),
                np.array([d.score for d in v], dtype=np.float64)) for k, v in grouped.items()}


def evaluate(dets, gts: dict, max_dets: int = 300, iou_thresholds=IOU_THRESHOLDS) -> MetricsReport:
    """Metrics over all images.

    ``dets`` is a list of :class:`~dense_target.postprocess.Detection` or a
    mapping ``image_id -> (boxes, scores)``; ``gts`` maps every image id to
    its ``(N, 4)`` ground-truth boxes. Detections beyond ``max_dets`` per
    image (by score) are dropped.
    """
    dets = _group_detections(dets)
    gts = {k: np.asarray(v, dtype=np.float64).reshape(-1, 4) for k, v in gts.items()}
    unknown = sorted(set(dets) - set(gts))
    if unknown:
        raise ImageIdMismatch(f"detections reference unknown image ids {unknown[:10]}")

    n_gt = sum(len(v) for v in gts.values())
    per_image = {}
    for image_id in sorted(gts):
        boxes, scores = dets.get(image_id, (np.zeros((0, 4)), np.zeros(0)))
        order = sort_order(boxes, scores)[:max_dets]
        per_image[image_id] = (boxes[order], scores[order])

    rows = []
    for t in iou_thresholds:
        all_scores, all_tp, matched = [], [], 0
        for image_id, (boxes, scores) in per_image.items():
            m = match_detections(boxes, scores, gts[image_id], t)
            all_scores.append(scores)
            all_tp.append(m >= 0)
            matched += int(np.count_nonzero(m >= 0))
        scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
        tp = np.concatenate(all_tp) if all_tp else np.zeros(0, bool)
        ap = average_precision(scores, tp, n_gt)
        rows.append({"iou": float(t), "ap": -1.0 if ap is None else ap,
                     "recall": -1.0 if n_gt == 0 else matched / n_gt})

    def at(t, key):
        for r in rows:
            if abs(r["iou"] - t) < 1e-9:
                return r[key]
        return -1.0

    return MetricsReport(
        ap=float(np.mean([r["ap"] for r in rows])),
        ap50=at(0.5, "ap"),
        ap75=at(0.75, "ap"),
        ar300=float(np.mean([r["recall"] for r in rows])),
        ar300_50=at(0.5, "recall"),
        per_threshold=rows,
    )
