"""Annotation JSON files and on-disk dataset access.

Schema::

    {"images": [{"id": 0, "width": 64, "height": 64, "file": "train/000000.dtr"}],
     "annotations": [{"image_id": 0, "bbox": [x1, y1, x2, y2]}]}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BoxOutOfBounds, FormatError, ImageIdMismatch, InvalidBox
from .geometry import Box2D
from .heatmap import read_raster


@dataclass
class ImageRecord:
    id: int
    width: int
    height: int
    file: str
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))


@dataclass
class AnnotationFile:
    images: dict = field(default_factory=dict)

    def add_image(self, image_id: int, width: int, height: int, file: str, boxes=None) -> None:
        boxes = np.zeros((0, 4)) if boxes is None else np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        self.images[int(image_id)] = ImageRecord(int(image_id), int(width), int(height), file, boxes)

    def validate(self) -> None:
        for rec in self.images.values():
            for b in rec.boxes:
                try:
                    Box2D.from_array(b)
                except InvalidBox as exc:
                    raise InvalidBox(f"image {rec.id}: {exc}") from exc
                if b[0] < 0 or b[1] < 0 or b[2] > rec.width or b[3] > rec.height:
                    raise BoxOutOfBounds(f"image {rec.id}: box {list(map(float, b))} outside "
                                         f"{rec.width}x{rec.height}")

    def gt_boxes(self) -> dict:
        return {k: rec.boxes for k, rec in self.images.items()}

    def to_dict(self) -> dict:
        images, anns = [], []
        for k in sorted(self.images):
            rec = self.images[k]
            images.append({"id": rec.id, "width": rec.width, "height": rec.height, "file": rec.file})
            anns.extend({"image_id": rec.id, "bbox": [float(v) for v in b]} for b in rec.boxes)
        return {"images": images, "annotations": anns}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict, validate: bool = True) -> "AnnotationFile":
        try:
            out = cls()
            boxes: dict = {}
            for a in d["annotations"]:
                boxes.setdefault(int(a["image_id"]), []).append([float(v) for v in a["bbox"]])
            for im in d["images"]:
                out.add_image(im["id"], im["width"], im["height"], im.get("file", ""),
                              boxes.pop(int(im["id"]), None))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed annotation file: {exc!r}") from exc
        if boxes:
            raise ImageIdMismatch(f"annotations reference unknown image ids {sorted(boxes)[:10]}")
        if validate:
            out.validate()
        return out

    @classmethod
    def load(cls, path, validate: bool = True) -> "AnnotationFile":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        return cls.from_dict(d, validate)


def coco_to_annotations(coco: dict) -> AnnotationFile:
    """Convert COCO-style ``[x, y, w, h]`` boxes to the corner schema."""
    converted = {
        "images": [{"id": im["id"], "width": im["width"], "height": im["height"],
                    "file": im.get("file_name", im.get("file", ""))} for im in coco["images"]],
        "annotations": [{"image_id": a["image_id"],
                         "bbox": [a["bbox"][0], a["bbox"][1],
                                  a["bbox"][0] + a["bbox"][2], a["bbox"][1] + a["bbox"][3]]}
                        for a in coco["annotations"]],
    }
    return AnnotationFile.from_dict(converted)


@dataclass
class Sample:
    image_id: int
    image: np.ndarray
    boxes: np.ndarray


def load_split(dataset_dir, split: str) -> list:
    """Images and boxes of one split of a generated dataset, ordered by image id."""
    ann = AnnotationFile.load(os.path.join(dataset_dir, f"annotations_{split}.json"))
    out = []
    for k in sorted(ann.images):
        rec = ann.images[k]
        img = read_raster(os.path.join(dataset_dir, rec.file))
        out.append(Sample(rec.id, img.astype(np.float64), rec.boxes))
    return out
