"""Anchor pyramids, IoU-threshold assignment and box delta coding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import iou_matrix

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1

# exp() guard when decoding log-size deltas
DELTA_CLAMP = math.log(1000.0 / 16)
# IoUs this close count as equal, so rounding cannot flip a threshold or a tie
IOU_TOL = 1e-9


@dataclass(frozen=True)
class AnchorGridSpec:
    levels: tuple = ((8, 32.0), (16, 64.0), (32, 128.0), (64, 256.0), (128, 512.0))
    scales: tuple = (1.0, 2 ** (1 / 3), 2 ** (2 / 3))
    aspect_ratios: tuple = (0.5, 1.0, 2.0)

    def __post_init__(self):
        levels = tuple((int(s), float(b)) for s, b in self.levels)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "aspect_ratios", tuple(float(r) for r in self.aspect_ratios))
        strides = [s for s, _ in levels]
        if not strides or any(b <= a for a, b in zip(strides, strides[1:])):
            raise ConfigError(f"strides must be strictly increasing: {strides}")
        if any(b <= 0 for _, b in levels) or any(s <= 0 for s in self.scales) \
                or any(r <= 0 for r in self.aspect_ratios):
            raise ConfigError("base sizes, scales and ratios must be positive")

    @property
    def strides(self) -> tuple:
        return tuple(s for s, _ in self.levels)

    @property
    def anchors_per_cell(self) -> int:
        return len(self.scales) * len(self.aspect_ratios)

    def cell_shapes(self) -> np.ndarray:
        """``(L, A, 2)`` anchor (width, height) per level, in (scale, ratio) order."""
        out = []
        for _, base in self.levels:
            level = []
            for s in self.scales:
                area = (base * s) ** 2
                for r in self.aspect_ratios:
                    # ratio is height / width
                    w = math.sqrt(area / r)
                    level.append((w, w * r))
            out.append(level)
        return np.array(out)


def generate_anchors(spec: AnchorGridSpec, image_h: int, image_w: int) -> np.ndarray:
    """All anchors as an ``(N, 4)`` xyxy array.

    Order is level-major, then grid row, column, scale, ratio; each level
    has ``ceil(image / stride)`` cells per axis.
    """
    shapes = spec.cell_shapes()
    out = []
    for (stride, _), wh in zip(spec.levels, shapes):
        fh, fw = -(-image_h // stride), -(-image_w // stride)
        cy = (np.arange(fh) + 0.5) * stride
        cx = (np.arange(fw) + 0.5) * stride
        cyy, cxx = np.meshgrid(cy, cx, indexing="ij")
        ctr = np.stack([cxx, cyy], axis=-1).reshape(-1, 1, 2)
        half = wh.reshape(1, -1, 2) / 2.0
        out.append(np.concatenate([ctr - half, ctr + half], axis=-1).reshape(-1, 4))
    return np.concatenate(out, axis=0)


def _center_size(b: np.ndarray):
    w = b[..., 2] - b[..., 0]
    h = b[..., 3] - b[..., 1]
    return b[..., 0] + 0.5 * w, b[..., 1] + 0.5 * h, w, h


def encode_deltas(anchors, gt, variances=(1.0, 1.0, 1.0, 1.0)) -> np.ndarray:
    """``((gx-ax)/aw, (gy-ay)/ah, ln(gw/aw), ln(gh/ah))`` divided by ``variances``.

    Works on single boxes (length-4) or broadcastable ``(..., 4)`` arrays.
    """
    ax, ay, aw, ah = _center_size(np.asarray(anchors, dtype=np.float64))
    gx, gy, gw, gh = _center_size(np.asarray(gt, dtype=np.float64))
    d = np.stack([(gx - ax) / aw, (gy - ay) / ah, np.log(gw / aw), np.log(gh / ah)], axis=-1)
    return d / np.asarray(variances, dtype=np.float64)


def decode_deltas(anchors, deltas, variances=(1.0, 1.0, 1.0, 1.0)) -> np.ndarray:
    ax, ay, aw, ah = _center_size(np.asarray(anchors, dtype=np.float64))
    d = np.asarray(deltas, dtype=np.float64) * np.asarray(variances, dtype=np.float64)
    cx = ax + d[..., 0] * aw
    cy = ay + d[..., 1] * ah
    w = aw * np.exp(np.minimum(d[..., 2], DELTA_CLAMP))
    h = ah * np.exp(np.minimum(d[..., 3], DELTA_CLAMP))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


@dataclass
class AnchorAssignment:
    """Per-anchor labels, stored column-wise.

    ``labels`` holds POSITIVE / NEGATIVE / IGNORE; ``matched_gt`` is -1 unless
    positive; ``regression_targets`` rows are NaN unless positive.
    """

    labels: np.ndarray
    matched_gt: np.ndarray
    regression_targets: np.ndarray
    max_iou: np.ndarray = field(repr=False)

    @property
    def positive(self) -> np.ndarray:
        return self.labels == POSITIVE

    @property
    def num_positive(self) -> int:
        return int(np.count_nonzero(self.labels == POSITIVE))

    def __len__(self):
        return len(self.labels)


def assign_anchors(anchors, gt, pos_iou: float = 0.5, neg_iou: float = 0.4,
                   force_match: bool = False, variances=(1.0, 1.0, 1.0, 1.0),
                   image_size: tuple | None = None) -> AnchorAssignment:
    """Match each anchor to its highest-IoU ground truth.

    Positive when that IoU is >= ``pos_iou``, negative when < ``neg_iou``,
    ignored otherwise; ties go to the lowest gt index. ``force_match`` also
    makes each gt's best anchor positive. With ``image_size=(h, w)``, anchors
    poking outside the image are ignored instead of being labelled.
    """
    if not 0 <= neg_iou <= pos_iou <= 1:
        raise ConfigError(f"need 0 <= neg_iou <= pos_iou <= 1, got {neg_iou}, {pos_iou}")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    n = len(anchors)
    labels = np.full(n, NEGATIVE, dtype=np.int8)
    matched = np.full(n, -1, dtype=np.int64)
    targets = np.full((n, 4), np.nan)
    if len(gt) == 0:
        return AnchorAssignment(labels, matched, targets, np.zeros(n))

    ious = iou_matrix(anchors, gt)
    # first near-maximum -> lowest gt index
    best = np.argmax(ious >= ious.max(axis=1, keepdims=True) - IOU_TOL, axis=1)
    best_iou = ious[np.arange(n), best]
    labels[best_iou >= neg_iou - IOU_TOL] = IGNORE
    pos = best_iou >= pos_iou - IOU_TOL
    if force_match:
        for g in range(len(gt)):
            a = int(np.argmax(ious[:, g] >= ious[:, g].max() - IOU_TOL))
            if ious[a, g] > 0 and not pos[a]:
                pos[a] = True
                best[a] = g
    labels[pos] = POSITIVE
    if image_size is not None:
        h, w = image_size
        outside = (anchors[:, 0] < 0) | (anchors[:, 1] < 0) | (anchors[:, 2] > w) | (anchors[:, 3] > h)
        labels[outside & ~pos] = IGNORE
    matched[pos] = best[pos]
    targets[pos] = encode_deltas(anchors[pos], gt[best[pos]], variances)
    return AnchorAssignment(labels, matched, targets, best_iou)
