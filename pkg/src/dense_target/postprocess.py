"""Score filtering, greedy NMS and the per-image detection cap."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidBox
from .geometry import Box2D, iou_matrix


@dataclass(frozen=True)
class Detection:
    box: Box2D
    score: float
    image_id: int
    class_id: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise InvalidBox(f"detection score {self.score} outside [0, 1]")


def sort_order(boxes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Indices by score desc, then x1, y1, x2, y2 ascending."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((boxes[:, 3], boxes[:, 2], boxes[:, 1], boxes[:, 0], -scores))


def nms_indices(boxes, scores, iou_thresh: float = 0.5, max_out: int = 300) -> np.ndarray:
    """Greedy suppression; returns kept indices in descending-score order."""
    if not 0 < iou_thresh < 1:
        raise ValueError(f"iou_thresh must lie in (0, 1), got {iou_thresh}")
    if max_out < 1:
        raise ValueError(f"max_out must be >= 1, got {max_out}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = sort_order(boxes, scores)
    keep = []
    while order.size and len(keep) < max_out:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        if not rest.size:
            break
        ov = iou_matrix(boxes[i:i + 1], boxes[rest])[0]
        order = rest[ov < iou_thresh]
    return np.array(keep, dtype=np.intp)


def filter_and_cap_indices(boxes, scores, score_thresh: float = 0.05, iou_thresh: float = 0.5,
                           max_out: int = 300) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    idx = np.flatnonzero(scores >= score_thresh)
    if not idx.size:
        return idx
    kept = nms_indices(np.asarray(boxes)[idx], scores[idx], iou_thresh, max_out)
    return idx[kept]


def _to_arrays(dets):
    boxes = np.array([d.box.as_list() for d in dets], dtype=np.float64).reshape(-1, 4)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    return boxes, scores


def nms(dets, iou_thresh: float = 0.5, max_out: int = 300) -> list:
    """Greedy NMS over one image's detections."""
    dets = list(dets)
    boxes, scores = _to_arrays(dets)
    return [dets[i] for i in nms_indices(boxes, scores, iou_thresh, max_out)]


def filter_and_cap(dets, score_thresh: float = 0.05, max_out: int = 300,
                   iou_thresh: float = 0.5) -> list:
    """Drop low scores, suppress, keep the top ``max_out`` -- per image."""
    by_image: dict = {}
    for d in dets:
        by_image.setdefault(d.image_id, []).append(d)
    out = []
    for image_id in sorted(by_image):
        group = by_image[image_id]
        boxes, scores = _to_arrays(group)
        out.extend(group[i] for i in filter_and_cap_indices(boxes, scores, score_thresh, iou_thresh, max_out))
    return out


def detections_from_arrays(boxes, scores, image_id: int) -> list:
    return [Detection(Box2D.from_array(b), float(s), int(image_id))
            for b, s in zip(np.asarray(boxes).reshape(-1, 4), scores)]


def write_detections(dets, path) -> None:
    """JSON array of ``{image_id, box: [x1, y1, x2, y2], score}``."""
    payload = [{"image_id": d.image_id, "box": d.box.as_list(), "score": d.score} for d in dets]
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def read_detections(path) -> list:
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise FormatError(f"{path}: detections must be a JSON array")
    try:
        return [Detection(Box2D.from_array(d["box"]), float(d["score"]), int(d["image_id"]),
                          int(d.get("class_id", 0))) for d in payload]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed detection entry: {exc}") from exc
