"""Loss kernels with analytic gradients.

Each kernel returns ``(value, grad)`` where ``grad`` has the shape of the
prediction it differentiates. The autodiff engine wraps these as graph nodes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .anchors import IGNORE, POSITIVE
from .errors import ConfigError, DomainError, ShapeMismatch

EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")


class Reduction(str, enum.Enum):
    MEAN_ACTIVE = "mean_active"
    SUM_OVER_BATCH_MEAN_PIXELS = "sum_over_batch_mean_pixels"


@dataclass(frozen=True)
class HemParams:
    pos_thresh: float = 0.3
    neg_thresh: float = 0.1
    reduction: Reduction = Reduction.MEAN_ACTIVE

    def __post_init__(self):
        object.__setattr__(self, "reduction", Reduction(self.reduction))
        if not 0 <= self.neg_thresh < self.pos_thresh <= 1:
            raise ConfigError("need 0 <= neg_thresh < pos_thresh <= 1, got "
                              f"{self.neg_thresh}, {self.pos_thresh}")


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_reg: float = 1.0
    lambda_gl: float = 1.0

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_reg, self.lambda_gl) < 0:
            raise ConfigError(f"loss weights must be >= 0: {self}")


def focal_terms(p, y, params: FocalParams = FocalParams()):
    """Per-anchor focal loss and its derivative w.r.t. ``p`` (no reduction).

    Uses the class-balanced weight: ``alpha`` for positives, ``1 - alpha``
    for negatives.
    """
    p = np.asarray(p, dtype=np.float64)
    pos = np.asarray(y) == 1
    a, g = params.alpha, params.gamma
    pt = np.where(pos, p, 1.0 - p)
    at = np.where(pos, a, 1.0 - a)
    one_m = 1.0 - pt
    log_pt = np.log(pt)
    loss = -at * one_m ** g * log_pt
    # d/dpt of -(1-pt)^g ln(pt)
    if g == 0:
        dpt = -at / pt
    else:
        dpt = at * (g * one_m ** (g - 1) * log_pt - one_m ** g / pt)
    return loss, np.where(pos, dpt, -dpt)


def focal_loss(p, labels, params: FocalParams = FocalParams(), clamp: bool = True):
    """Focal loss summed over non-ignored anchors, divided by ``max(1, #positives)``.

    ``labels`` uses 1 (positive), 0 (negative) and -1 (ignore). With ``clamp``
    the probabilities are clipped to ``[EPS, 1 - EPS]`` and the gradient is
    zero where clipping is active.
    """
    p = np.asarray(p, dtype=np.float64)
    labels = np.asarray(labels)
    if p.shape != labels.shape:
        raise ShapeMismatch(f"focal_loss: p {p.shape} vs labels {labels.shape}")
    if clamp:
        pc = np.clip(p, EPS, 1.0 - EPS)
        live = pc == p
    else:
        if np.any((p <= 0) | (p >= 1)) or not np.all(np.isfinite(p)):
            raise DomainError("focal_loss: probabilities must lie strictly inside (0, 1)")
        pc, live = p, True
    active = labels != IGNORE
    norm = max(1, int(np.count_nonzero(labels == POSITIVE)))
    loss, grad = focal_terms(pc, labels == POSITIVE, params)
    value = float(np.sum(loss[active])) / norm
    grad = np.where(active & live, grad, 0.0) / norm
    return value, grad


def smooth_l1(x):
    """Mean smooth-L1 over all residual coordinates."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0, np.zeros_like(x)
    ax = np.abs(x)
    quad = ax < 1
    loss = np.where(quad, 0.5 * x * x, ax - 0.5)
    grad = np.where(quad, x, np.sign(x))
    return float(loss.sum()) / x.size, grad / x.size


def gaussian_loss(pred, target, params: HemParams = HemParams()):
    """Squared error restricted to confident positive / negative target pixels.

    Inputs are ``(H, W)`` maps or ``(n, H, W)`` batches. Pixels with
    ``target >= pos_thresh`` form the positive mask, ``target <= neg_thresh``
    the negative one; everything between contributes nothing.

    MEAN_ACTIVE: per image, mean error over each non-empty mask, the masks
    averaged with equal weight; then the batch mean.
    SUM_OVER_BATCH_MEAN_PIXELS: masked error summed over the batch, divided
    by the total number of pixels in the batch.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"gaussian_loss: pred {pred.shape} vs target {target.shape}")
    squeeze = pred.ndim == 2
    if squeeze:
        pred, target = pred[None], target[None]
    if pred.ndim != 3:
        raise ShapeMismatch(f"gaussian_loss: expected 2-D or 3-D maps, got {pred.shape}")
    n = pred.shape[0]
    diff = pred - target
    pos = target >= params.pos_thresh
    neg = target <= params.neg_thresh
    sq = diff * diff

    if params.reduction is Reduction.SUM_OVER_BATCH_MEAN_PIXELS:
        mask = pos | neg
        norm = float(pred.size)
        value = float(sq[mask].sum()) / norm
        grad = np.where(mask, 2.0 * diff, 0.0) / norm
    else:
        value = 0.0
        grad = np.zeros_like(pred)
        for i in range(n):
            masks = [m for m in (pos[i], neg[i]) if m.any()]
            for m in masks:
                k = np.count_nonzero(m)
                w = 1.0 / (len(masks) * k * n)
                value += float(sq[i][m].sum()) * w
                grad[i][m] = 2.0 * diff[i][m] * w
    return value, (grad[0] if squeeze else grad)


def total_loss(cls: float, reg: float, gl: float | None, w: LossWeights = LossWeights()) -> float:
    """Weighted sum of the three components; zero-weighted terms are skipped outright."""
    total = 0.0
    for lam, value in ((w.lambda_cls, cls), (w.lambda_reg, reg), (w.lambda_gl, gl)):
        if lam != 0:
            total += lam * value
    return total
