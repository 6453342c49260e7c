"""Per-image SGD on the weighted multi-task loss, with best-validation checkpointing."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from ..anchors import assign_anchors
from ..autodiff import SGD, ops
from ..errors import DivergenceError
from ..evaluation import evaluate
from ..geometry import CompositionMode
from ..heatmap import GaussianPatchSpec, build_target_map
from ..losses import FocalParams, HemParams
from ..postprocess import filter_and_cap_indices
from .model import Model, ModelKind, predict

LOG_HEADER = "epoch,loss_total,loss_cls,loss_reg,loss_gl,val_ap50"


@dataclass
class TrainConfig:
    epochs: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    focal: FocalParams = field(default_factory=FocalParams)
    hem: HemParams = field(default_factory=HemParams)
    patch: GaussianPatchSpec = field(default_factory=GaussianPatchSpec)
    mode: CompositionMode = CompositionMode.MAX
    pos_iou: float = 0.5
    neg_iou: float = 0.4
    score_thresh: float = 0.05
    nms_iou: float = 0.5
    max_dets: int = 300
    clip_norm: float | None = 10.0


@dataclass
class EpochRecord:
    epoch: int
    loss_total: float
    loss_cls: float
    loss_reg: float
    loss_gl: float | None
    val_ap50: float


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    init_val_ap50: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(LOG_HEADER + "\n")
        for r in self.rows:
            gl = "" if r.loss_gl is None else f"{r.loss_gl:.6f}"
            buf.write(f"{r.epoch},{r.loss_total:.6f},{r.loss_cls:.6f},{r.loss_reg:.6f},{gl},{r.val_ap50:.6f}\n")
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


@dataclass
class TrainingResult:
    log: TrainingLog
    best_state: dict
    best_epoch: int
    best_val_ap50: float
    feature_grad_norms: list = field(default_factory=list)


@dataclass
class _Target:
    labels: np.ndarray
    positive: np.ndarray
    deltas: np.ndarray
    gauss: np.ndarray | None


def prepare_targets(model: Model, samples, cfg: TrainConfig) -> list:
    out = []
    needs_map = model.kind.kind is not ModelKind.BASELINE
    for s in samples:
        h, w = s.image.shape
        a = assign_anchors(model.anchors(h, w), s.boxes, cfg.pos_iou, cfg.neg_iou)
        deltas = np.where(np.isnan(a.regression_targets), 0.0, a.regression_targets)
        gmap = build_target_map(s.boxes, h, w, cfg.patch, 2, cfg.mode) if needs_map else None
        out.append(_Target(a.labels, a.positive, deltas, gmap))
    return out


def _check(value: float, epoch: int, component: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(epoch, component, value)


def loss_graph(model: Model, image, target: _Target, cfg: TrainConfig):
    """Build the per-image graph; returns ``(total, cls, reg, gl_or_None)`` tensors."""
    out = model.forward(image)
    w = model.kind.weights
    l_cls = ops.focal_loss(ops.sigmoid(out["cls_logits"]), target.labels, cfg.focal)
    l_reg = ops.smooth_l1_loss(out["box_deltas"], target.deltas, target.positive)
    l_gl = None
    terms = [(w.lambda_cls, l_cls), (w.lambda_reg, l_reg)]
    if out["gauss"] is not None:
        l_gl = ops.gaussian_loss(out["gauss"], target.gauss, cfg.hem)
        terms.append((w.lambda_gl, l_gl))
    return ops.weighted_sum(terms), l_cls, l_reg, l_gl


def validation_ap50(model: Model, samples, cfg: TrainConfig) -> float:
    if not samples:
        return 0.0
    dets, gts = {}, {}
    for s in samples:
        p = predict(model, s.image)
        keep = filter_and_cap_indices(p.boxes, p.scores, cfg.score_thresh, cfg.nms_iou, cfg.max_dets)
        dets[s.image_id] = (p.boxes[keep], p.scores[keep])
        gts[s.image_id] = s.boxes
    return evaluate(dets, gts, cfg.max_dets, iou_thresholds=(0.5,)).ap50


def train(model: Model, train_samples, val_samples, cfg: TrainConfig, progress=None) -> TrainingResult:
    """Train in place; the model ends at its final state, the result holds the best one.

    The best checkpoint is the one with the highest validation AP.50, the
    initial weights included (epoch 0); ties keep the earlier epoch.
    """
    if not train_samples:
        raise ValueError("training set is empty")
    targets = prepare_targets(model, train_samples, cfg)
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    log = TrainingLog()
    best_state = model.state_dict()
    best_ap = log.init_val_ap50 = validation_ap50(model, val_samples, cfg)
    best_epoch = 0
    grad_norms = []
    shared = model.branch_names("shared")

    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        for idx in rng.permutation(len(train_samples)):
            total, l_cls, l_reg, l_gl = loss_graph(model, train_samples[idx].image, targets[idx], cfg)
            _check(float(l_cls.data), epoch, "cls")
            _check(float(l_reg.data), epoch, "reg")
            if l_gl is not None:
                _check(float(l_gl.data), epoch, "gl")
            _check(float(total.data), epoch, "total")
            opt.zero_grad()
            total.backward()
            if cfg.clip_norm is not None:
                norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in opt.params))
                _check(norm, epoch, "gradient")
                if norm > cfg.clip_norm:
                    scale = cfg.clip_norm / norm
                    for p in opt.params:
                        p.grad *= scale
            opt.step()
            sums += [float(total.data), float(l_cls.data), float(l_reg.data),
                     float(l_gl.data) if l_gl is not None else 0.0]
        grad_norms.append({k: float(np.linalg.norm(model.params[k].grad)) for k in shared})
        means = sums / len(train_samples)
        ap = validation_ap50(model, val_samples, cfg)
        has_gl = model.kind.kind is not ModelKind.BASELINE
        log.rows.append(EpochRecord(epoch, means[0], means[1], means[2], means[3] if has_gl else None, ap))
        if ap > best_ap:
            best_ap, best_epoch, best_state = ap, epoch, model.state_dict()
        if progress is not None:
            progress(log.rows[-1])
    return TrainingResult(log, best_state, best_epoch, best_ap, grad_norms)
