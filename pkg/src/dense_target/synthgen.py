"""Deterministic dense "shelf" scenes: a jittered grid of rectangular objects."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import datasets
from .errors import SpecError
from .heatmap import write_raster
from .prng import Xoshiro256, derive_seed

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SceneSpec:
    """Scene layout and appearance.

    Boxes are ``fill`` of a grid cell on each side. Each box center moves by
    up to ``jitter * fill * cell / 2`` per axis, so the envelope of possible
    placements spans ``fill * (1 + jitter)`` of the cell and never leaves it.
    Box corners are snapped to whole pixels. Each cell holds an object with
    probability ``occupancy`` (1 gives the full grid).
    """

    image_h: int = 64
    image_w: int = 64
    rows: int = 4
    cols: int = 4
    fill: float = 0.8
    jitter: float = 0.15
    object_intensity: tuple = (0.45, 0.95)
    background_intensity: tuple = (0.05, 0.35)
    border_contrast: float = 0.25
    noise: float = 0.1
    occupancy: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "object_intensity", tuple(float(v) for v in self.object_intensity))
        object.__setattr__(self, "background_intensity", tuple(float(v) for v in self.background_intensity))
        self.validate()

    def validate(self) -> None:
        if self.image_h < 1 or self.image_w < 1 or self.rows < 1 or self.cols < 1:
            raise SpecError("image size and grid rows/cols must be positive")
        if not 0 < self.fill <= 1:
            raise SpecError(f"fill must lie in (0, 1], got {self.fill}")
        if self.jitter < 0:
            raise SpecError(f"jitter must be >= 0, got {self.jitter}")
        if self.fill * (1 + self.jitter) > 1 + 1e-12:
            raise SpecError(f"fill/jitter overflow: fill*(1+jitter) = "
                            f"{self.fill * (1 + self.jitter):.4f} > 1")
        for name in ("object_intensity", "background_intensity"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise SpecError(f"{name} range is reversed: {(lo, hi)}")
        if not 0 <= self.occupancy <= 1:
            raise SpecError(f"occupancy must lie in [0, 1], got {self.occupancy}")
        if self.noise < 0 or self.border_contrast < 0:
            raise SpecError("noise and border_contrast must be >= 0")
        if self.fill * min(self.image_h / self.rows, self.image_w / self.cols) < 2:
            raise SpecError("objects would be smaller than 2 px")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise SpecError(f"unknown scene spec fields {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["object_intensity"] = list(self.object_intensity)
        d["background_intensity"] = list(self.background_intensity)
        return d


def _snap(v: float) -> float:
    return float(math.floor(v + 0.5))


def generate_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render one scene; returns a float32 ``(H, W)`` image and ``(N, 4)`` boxes.

    Draw order from the generator: background level, then per cell (row
    major) occupancy, x-jitter, y-jitter, intensity, then one noise sample
    per pixel. The occupancy draw is skipped when ``occupancy == 1``.
    """
    spec.validate()
    rng = Xoshiro256(spec.seed)
    ch, cw = spec.image_h / spec.rows, spec.image_w / spec.cols
    bh, bw = spec.fill * ch, spec.fill * cw
    img = np.full((spec.image_h, spec.image_w), rng.uniform(*spec.background_intensity))
    boxes = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            present = spec.occupancy >= 1 or rng.random() < spec.occupancy
            jx = (2 * rng.random() - 1) * spec.jitter * bw / 2
            jy = (2 * rng.random() - 1) * spec.jitter * bh / 2
            level = rng.uniform(*spec.object_intensity)
            if not present:
                continue
            cx, cy = (c + 0.5) * cw + jx, (r + 0.5) * ch + jy
            x1, x2 = _snap(cx - bw / 2), _snap(cx + bw / 2)
            y1, y2 = _snap(cy - bh / 2), _snap(cy + bh / 2)
            ix1, ix2, iy1, iy2 = int(x1), int(x2), int(y1), int(y2)
            img[iy1:iy2, ix1:ix2] = level - spec.border_contrast
            if ix2 - ix1 > 2 and iy2 - iy1 > 2:
                img[iy1 + 1:iy2 - 1, ix1 + 1:ix2 - 1] = level
            boxes.append((x1, y1, x2, y2))
    if spec.noise > 0:
        img += rng.uniform_array(img.size, -spec.noise, spec.noise).reshape(img.shape)
    return img.astype(np.float32), np.array(boxes, dtype=np.float64).reshape(-1, 4)


def image_seed(master: int, split: str, index: int) -> int:
    return derive_seed(master, split, index)


def _render_one(args):
    spec, seed = args
    return generate_scene(dataclasses.replace(spec, seed=seed))


def generate_dataset(spec: SceneSpec, n_train: int, n_val: int, n_test: int, seed: int,
                     out_dir, jobs: int = 1) -> dict:
    """Write ``<split>/<index>.dtr`` images and ``annotations_<split>.json`` per split.

    Returns a summary manifest (also written as ``dataset.json``).
    """
    counts = {"train": n_train, "val": n_val, "test": n_test}
    if any(n < 1 for n in counts.values()):
        raise SpecError(f"every split needs at least one image: {counts}")
    spec.validate()
    os.makedirs(out_dir, exist_ok=True)
    summary = {"scene": spec.to_dict(), "seed": seed, "splits": {}}
    image_id = 0
    for split in SPLITS:
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
        tasks = [(spec, image_seed(seed, split, i)) for i in range(counts[split])]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                scenes = list(pool.map(_render_one, tasks, chunksize=8))
        else:
            scenes = [_render_one(t) for t in tasks]
        ann = datasets.AnnotationFile()
        n_boxes = 0
        for i, (img, boxes) in enumerate(scenes):
            rel = f"{split}/{i:06d}.dtr"
            write_raster(img, os.path.join(out_dir, rel))
            ann.add_image(image_id, spec.image_w, spec.image_h, rel, boxes)
            n_boxes += len(boxes)
            image_id += 1
        ann.save(os.path.join(out_dir, f"annotations_{split}.json"))
        summary["splits"][split] = {"images": counts[split], "boxes": n_boxes}
    with open(os.path.join(out_dir, "dataset.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def standard_benchmark() -> dict:
    """The shipped reference configuration (scene spec plus split sizes and seed)."""
    from importlib import resources
    text = resources.files("dense_target").joinpath("configs/standard_benchmark.json").read_text()
    return json.loads(text)


def split_config(cfg: dict) -> tuple[SceneSpec, dict]:
    """Separate a gen-synthetic config into a SceneSpec and the dataset arguments."""
    cfg = dict(cfg)
    ds = {k: int(cfg.pop(k)) for k in ("n_train", "n_val", "n_test", "seed") if k in cfg}
    if "seed" in ds:
        cfg.setdefault("seed", ds["seed"])
    return SceneSpec.from_dict(cfg), ds
