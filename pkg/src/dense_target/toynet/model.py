"""Desk-scale RetinaNet, Gaussian Decoder Network and Gaussian Layer Network.

All three share a small strided-conv encoder (levels C2, C3, C4 at strides
4, 8, 16) and an FPN-style top-down merge feeding class and box subnets.

* GDN adds a separate decoder: each block is conv -> bias -> relu -> 2x
  bilinear, with encoder skip connections, ending at half resolution.
* GLN adds a single "gaussian layer" on concat(C2, P3 upsampled to C2)
  followed by 2x interpolation to half resolution.

Both end in a gaussian subnet producing a 1-channel sigmoid map. Batch norm
is replaced by the per-channel conv bias: with batch size 1 it would reduce
to instance normalisation.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..anchors import AnchorGridSpec, decode_deltas, generate_anchors
from ..autodiff import Tensor, ops
from ..errors import ConfigError, ShapeMismatch
from ..heatmap import map_shape
from ..losses import LossWeights

PRIOR_PROBABILITY = 0.01

TOY_ANCHORS = AnchorGridSpec(levels=((4, 12.0), (8, 24.0)))


class ModelKind(str, enum.Enum):
    BASELINE = "baseline"
    GDN = "gdn"
    GLN = "gln"


@dataclass(frozen=True)
class ToyBackboneConfig:
    widths: tuple = (8, 16, 16)
    kernel_size: int = 3
    stem_width: int = 8
    fpn_width: int = 16
    head_convs: int = 1
    gauss_width: int = 8
    upsample: str = "bilinear"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1 or min(self.stem_width, self.fpn_width, self.gauss_width) < 1:
            raise ConfigError(f"channel widths must be positive: {self}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.upsample not in ("bilinear", "nearest"):
            raise ConfigError(f"upsample must be 'bilinear' or 'nearest', got {self.upsample!r}")

    @property
    def levels(self) -> tuple:
        """Pyramid indices; level ``l`` has stride ``2**l``."""
        return tuple(range(2, 2 + len(self.widths)))


@dataclass(frozen=True)
class ToyModelKind:
    kind: ModelKind = ModelKind.GLN
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.kind is ModelKind.BASELINE and self.weights.lambda_gl != 0:
            object.__setattr__(self, "weights", dataclasses.replace(self.weights, lambda_gl=0.0))


class Model:
    """Parameters plus a define-by-run forward pass for ``(H, W)`` single-channel images."""

    def __init__(self, kind: ToyModelKind, cfg: ToyBackboneConfig = ToyBackboneConfig(),
                 anchors: AnchorGridSpec = TOY_ANCHORS, seed: int = 0):
        self.kind = kind
        self.cfg = cfg
        self.anchor_spec = anchors
        self.seed = int(seed)
        strides = {2 ** lvl: lvl for lvl in cfg.levels}
        bad = [s for s in anchors.strides if s not in strides]
        if bad:
            raise ConfigError(f"anchor strides {bad} have no backbone level; available {sorted(strides)}")
        self.head_levels = tuple(strides[s] for s in anchors.strides)
        if kind.kind is ModelKind.GLN and len(cfg.levels) < 2:
            raise ConfigError("GLN needs at least two backbone levels (C2 and P3)")
        self.params: OrderedDict = OrderedDict()
        self._rng = np.random.default_rng(self.seed)
        self._build()
        del self._rng
        self._anchor_cache: dict = {}

    # -- construction -------------------------------------------------------

    def _conv(self, name, cin, cout, k=None, bias_init=0.0, std=None):
        k = self.cfg.kernel_size if k is None else k
        fan_in = cin * k * k
        if std is None:
            bound = math.sqrt(6.0 / fan_in)
            w = self._rng.uniform(-bound, bound, size=(cout, cin, k, k))
        else:
            w = self._rng.normal(0.0, std, size=(cout, cin, k, k))
        self.params[name + ".w"] = Tensor(w, requires_grad=True, name=name + ".w")
        self.params[name + ".b"] = Tensor(np.full(cout, bias_init), requires_grad=True, name=name + ".b")

    def _build(self):
        cfg = self.cfg
        a = self.anchor_spec.anchors_per_cell
        self._conv("stem", 1, cfg.stem_width)
        cin = cfg.stem_width
        for lvl, w in zip(cfg.levels, cfg.widths):
            self._conv(f"c{lvl}.down", cin, w)
            self._conv(f"c{lvl}.conv", w, w)
            cin = w
        for lvl, w in zip(cfg.levels, cfg.widths):
            self._conv(f"fpn.lat{lvl}", w, cfg.fpn_width, k=1)
            self._conv(f"fpn.out{lvl}", cfg.fpn_width, cfg.fpn_width)
        for i in range(cfg.head_convs):
            self._conv(f"cls.conv{i}", cfg.fpn_width, cfg.fpn_width)
        prior = -math.log((1 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY)
        self._conv("cls.out", cfg.fpn_width, a, std=0.01, bias_init=prior)
        for i in range(cfg.head_convs):
            self._conv(f"box.conv{i}", cfg.fpn_width, cfg.fpn_width)
        self._conv("box.out", cfg.fpn_width, 4 * a, std=0.01)

        g = cfg.gauss_width
        if self.kind.kind is ModelKind.GDN:
            levels = cfg.levels[::-1]
            cin = cfg.widths[-1]
            for i, lvl in enumerate(levels):
                skip = 0 if i == 0 else cfg.widths[cfg.levels.index(lvl)]
                self._conv(f"gdn.b{lvl}", cin + skip, g)
                cin = g
        elif self.kind.kind is ModelKind.GLN:
            self._conv("gln.b2", cfg.widths[0] + cfg.fpn_width, g)
        if self.kind.kind is not ModelKind.BASELINE:
            self._conv("gauss.conv", g, g)
            self._conv("gauss.out", g, 1, std=0.01, bias_init=prior)

    # -- params ---------------------------------------------------------------

    def parameters(self) -> list:
        return list(self.params.values())

    def state_dict(self) -> OrderedDict:
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise ConfigError(f"state is missing parameters {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeMismatch(f"{k}: state {arr.shape} vs model {t.shape}")
            t.data = arr.copy()

    def branch_names(self, branch: str) -> list:
        """Parameter names of ``"shared"``, ``"cls"``, ``"box"`` or ``"gauss"``."""
        prefixes = {"cls": ("cls.",), "box": ("box.",), "gauss": ("gdn.", "gln.", "gauss.")}
        if branch == "shared":
            taken = sum(prefixes.values(), ())
            return [k for k in self.params if not k.startswith(taken)]
        return [k for k in self.params if k.startswith(prefixes[branch])]

    def config_dict(self) -> dict:
        return {
            "kind": self.kind.kind.value,
            "weights": dataclasses.asdict(self.kind.weights),
            "backbone": dataclasses.asdict(self.cfg),
            "anchors": {"levels": [list(lv) for lv in self.anchor_spec.levels],
                        "scales": list(self.anchor_spec.scales),
                        "aspect_ratios": list(self.anchor_spec.aspect_ratios)},
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, d: dict) -> "Model":
        kind = ToyModelKind(ModelKind(d["kind"]), LossWeights(**d.get("weights", {})))
        cfg = ToyBackboneConfig(**d.get("backbone", {}))
        a = d.get("anchors")
        anchors = TOY_ANCHORS if a is None else AnchorGridSpec(
            levels=tuple(tuple(lv) for lv in a["levels"]), scales=tuple(a["scales"]),
            aspect_ratios=tuple(a["aspect_ratios"]))
        return cls(kind, cfg, anchors, d.get("seed", 0))

    def save_config(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.config_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    # -- forward --------------------------------------------------------------

    def anchors(self, image_h: int, image_w: int) -> np.ndarray:
        key = (image_h, image_w)
        if key not in self._anchor_cache:
            self._anchor_cache[key] = generate_anchors(self.anchor_spec, image_h, image_w)
        return self._anchor_cache[key]

    def _apply(self, name, x, stride=1, act=True):
        k = self.params[name + ".w"].shape[-1]
        y = ops.conv2d(x, self.params[name + ".w"], self.params[name + ".b"], stride=stride, pad=k // 2)
        return ops.relu(y) if act else y

    def _resize(self, x, h, w):
        if x.shape[2:] == (h, w):
            return x
        if self.cfg.upsample == "nearest" and (h, w) == (2 * x.shape[2], 2 * x.shape[3]):
            return ops.upsample2x(x, "nearest")
        return ops.resize_bilinear(x, h, w)

    def forward(self, image) -> dict:
        """Return ``cls_logits`` (A,), ``box_deltas`` (A, 4) and ``gauss`` (H/2, W/2) or None."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise ShapeMismatch(f"expected a 2-D image, got shape {image.shape}")
        ih, iw = image.shape
        top = 2 ** self.cfg.levels[-1]
        if ih % top or iw % top:
            raise ShapeMismatch(f"image {image.shape} must be divisible by the coarsest stride {top}")
        x = Tensor(image[None, None])

        h = self._apply("stem", x, stride=2)
        feats = {}
        for lvl in self.cfg.levels:
            h = self._apply(f"c{lvl}.down", h, stride=2)
            h = self._apply(f"c{lvl}.conv", h)
            feats[lvl] = h

        pyramid = {}
        merged = None
        for lvl in reversed(self.cfg.levels):
            lat = self._apply(f"fpn.lat{lvl}", feats[lvl], act=False)
            if merged is not None:
                lat = ops.add(lat, ops.upsample2x(merged, "nearest"))
            merged = lat
            pyramid[lvl] = self._apply(f"fpn.out{lvl}", lat, act=False)

        n_anchor = self.anchor_spec.anchors_per_cell
        cls_parts, box_parts = [], []
        for lvl in self.head_levels:
            c = b = pyramid[lvl]
            for i in range(self.cfg.head_convs):
                c = self._apply(f"cls.conv{i}", c)
                b = self._apply(f"box.conv{i}", b)
            c = self._apply("cls.out", c, act=False)
            b = self._apply("box.out", b, act=False)
            fh, fw = c.shape[2:]
            cls_parts.append(ops.reshape(ops.transpose(c, (0, 2, 3, 1)), (fh * fw * n_anchor,)))
            box_parts.append(ops.reshape(ops.transpose(b, (0, 2, 3, 1)), (fh * fw * n_anchor, 4)))
        cls_logits = cls_parts[0] if len(cls_parts) == 1 else ops.concat(cls_parts, axis=0)
        box_deltas = box_parts[0] if len(box_parts) == 1 else ops.concat(box_parts, axis=0)

        gauss = None
        mh, mw = map_shape(ih, iw, 2)
        if self.kind.kind is ModelKind.GDN:
            d = None
            for lvl in reversed(self.cfg.levels):
                inp = feats[lvl] if d is None else ops.concat_channels(d, feats[lvl])
                d = self._apply(f"gdn.b{lvl}", inp)
                d = self._resize(d, 2 * d.shape[2], 2 * d.shape[3])
            gauss = self._gauss_head(self._resize(d, mh, mw))
        elif self.kind.kind is ModelKind.GLN:
            c2 = feats[self.cfg.levels[0]]
            p3 = pyramid[self.cfg.levels[1]]
            b2 = self._apply("gln.b2", ops.concat_channels(c2, self._resize(p3, *c2.shape[2:])))
            gauss = self._gauss_head(self._resize(b2, mh, mw))
        return {"cls_logits": cls_logits, "box_deltas": box_deltas, "gauss": gauss}

    def _gauss_head(self, x):
        x = self._apply("gauss.conv", x)
        x = self._apply("gauss.out", x, act=False)
        return ops.reshape(ops.sigmoid(x), x.shape[2:])


def build_model(kind: ToyModelKind | ModelKind | str, cfg: ToyBackboneConfig = ToyBackboneConfig(),
                anchors: AnchorGridSpec = TOY_ANCHORS, seed: int = 0) -> Model:
    if not isinstance(kind, ToyModelKind):
        kind = ToyModelKind(ModelKind(kind))
    return Model(kind, cfg, anchors, seed)


@dataclass
class Prediction:
    """Raw (pre-NMS) detections for one image."""

    boxes: np.ndarray
    scores: np.ndarray
    gaussian_map: np.ndarray | None


def predict(model: Model, image) -> Prediction:
    out = model.forward(image)
    logits = out["cls_logits"].data
    scores = np.where(logits >= 0, 1.0 / (1.0 + np.exp(-np.abs(logits))),
                      np.exp(-np.abs(logits)) / (1.0 + np.exp(-np.abs(logits))))
    anchors = model.anchors(*np.shape(image))
    boxes = decode_deltas(anchors, out["box_deltas"].data)
    gmap = None if out["gauss"] is None else out["gauss"].data.copy()
    return Prediction(boxes, scores, gmap)
