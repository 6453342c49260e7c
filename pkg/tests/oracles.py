"""Slow, independent reference implementations used only by the tests.

Everything here is pure Python (lists, fractions) and shares no code with
the package beyond the tie-break conventions it is meant to confirm.
"""

import math
from fractions import Fraction


def box_iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def det_key(box, score):
    return (-score, box[0], box[1], box[2], box[3])


def naive_nms(boxes, scores, thresh, max_out=300):
    order = sorted(range(len(boxes)), key=lambda i: det_key(boxes[i], scores[i]))
    kept = []
    for i in order:
        if len(kept) >= max_out:
            break
        if all(box_iou(boxes[i], boxes[k]) < thresh for k in kept):
            kept.append(i)
    return kept


def naive_match(boxes, gts, thresh):
    """Detections in the given order each claim their best free gt (lowest index on ties)."""
    claimed = set()
    out = []
    for b in boxes:
        best, best_iou = -1, -1.0
        for g, gt in enumerate(gts):
            if g in claimed:
                continue
            v = box_iou(b, gt)
            if v >= thresh and v > best_iou:
                best, best_iou = g, v
        if best >= 0:
            claimed.add(best)
        out.append(best)
    return out


def naive_ap(records, n_gt):
    """records: list of (score, is_tp). One curve point per distinct score, each
    counted from scratch; 101 recall levels compared as exact fractions."""
    if n_gt == 0:
        return None
    points = []
    for s in sorted({r[0] for r in records}, reverse=True):
        tp = sum(1 for r in records if r[0] >= s and r[1])
        fp = sum(1 for r in records if r[0] >= s and not r[1])
        points.append((Fraction(tp, n_gt), tp / (tp + fp)))
    total = 0.0
    for k in range(101):
        r = Fraction(k, 100)
        cands = [p for rec, p in points if rec >= r]
        total += max(cands) if cands else 0.0
    return total / 101


def naive_evaluate(dets, gts, max_dets=300, thresholds=None):
    """dets: {image_id: list of (box, score)}; gts: {image_id: list of boxes}.
    Returns (ap, ap50, ap75, ar, ar50) with -1 when there is no ground truth."""
    if thresholds is None:
        thresholds = [k / 100 for k in range(50, 100, 5)]
    n_gt = sum(len(v) for v in gts.values())
    capped = {}
    for img in gts:
        lst = sorted(dets.get(img, []), key=lambda d: det_key(d[0], d[1]))
        capped[img] = lst[:max_dets]
    aps, recalls = [], []
    for t in thresholds:
        records = []
        hits = 0
        for img, lst in capped.items():
            m = naive_match([d[0] for d in lst], gts[img], t)
            for (box, score), g in zip(lst, m):
                records.append((score, g >= 0))
                hits += g >= 0
        ap = naive_ap(records, n_gt)
        aps.append(-1.0 if ap is None else ap)
        recalls.append(-1.0 if n_gt == 0 else hits / n_gt)

    def pick(values, t):
        for th, v in zip(thresholds, values):
            if math.isclose(th, t):
                return v
        return -1.0

    return (sum(aps) / len(aps), pick(aps, 0.5), pick(aps, 0.75),
            sum(recalls) / len(recalls), pick(recalls, 0.5))


def hem_brute(pred, target, pos_t, neg_t):
    """Pixel-by-pixel loops, per-mask mean, equal mask weights."""
    sp = np_ = 0.0
    kp = kn = 0
    h, w = len(target), len(target[0])
    for i in range(h):
        for j in range(w):
            e = (pred[i][j] - target[i][j]) ** 2
            if target[i][j] >= pos_t:
                sp += e
                kp += 1
            elif target[i][j] <= neg_t:
                np_ += e
                kn += 1
    parts = ([sp / kp] if kp else []) + ([np_ / kn] if kn else [])
    return sum(parts) / len(parts) if parts else 0.0
