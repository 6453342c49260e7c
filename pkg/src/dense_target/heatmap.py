"""Ground-truth Gaussian maps and the ``.dtr`` raster container.

A map is built by evaluating one square Gaussian patch and warping it onto
every ground-truth box with a four-point homography. Rasters are plain 2-D
numpy arrays.
"""

from __future__ import annotations

import functools
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BoxOutOfBounds, FormatError, SpecError
from .geometry import Box2D, CompositionMode, Quad, four_point_transform, warp_accumulate

FOUR_LN2 = 4.0 * math.log(2.0)


@dataclass(frozen=True)
class GaussianPatchSpec:
    size: int = 120
    sigma: float = 40.0

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 3:
            raise SpecError(f"patch size must be an integer >= 3, got {self.size}")
        if not self.sigma > 0:
            raise SpecError(f"sigma must be positive, got {self.sigma}")


def gaussian_value(dx, dy, sigma: float):
    """``exp(-4 ln2 (dx^2 + dy^2) / sigma^2)``; sigma is the full width at half maximum."""
    return np.exp(-FOUR_LN2 * (np.square(dx) + np.square(dy)) / sigma ** 2)


@functools.lru_cache(maxsize=16)
def _cached_patch(size: int, sigma: float) -> np.ndarray:
    c = np.arange(size) + 0.5 - size / 2.0
    patch = gaussian_value(c[None, :], c[:, None], sigma)
    patch.setflags(write=False)
    return patch


def make_gaussian_patch(spec: GaussianPatchSpec = GaussianPatchSpec()) -> np.ndarray:
    """Square patch of side ``spec.size``, peak at its geometric center."""
    return _cached_patch(int(spec.size), float(spec.sigma))


def map_shape(image_h: int, image_w: int, downscale: int) -> tuple[int, int]:
    return (-(-image_h // downscale), -(-image_w // downscale))


def build_target_map(boxes, image_h: int, image_w: int,
                     spec: GaussianPatchSpec = GaussianPatchSpec(),
                     downscale: int = 2,
                     mode: CompositionMode | str = CompositionMode.MAX) -> np.ndarray:
    """Gaussian map at ``1/downscale`` resolution for the given boxes.

    ``boxes`` may be a sequence of :class:`Box2D` or an ``(N, 4)`` array.
    """
    if downscale < 1 or int(downscale) != downscale:
        raise SpecError(f"downscale must be a positive integer, got {downscale}")
    target = np.zeros(map_shape(image_h, image_w, downscale), dtype=np.float64)
    patch = make_gaussian_patch(spec)
    src = Box2D(0.0, 0.0, float(spec.size), float(spec.size)).to_quad()
    for b in boxes:
        box = b if isinstance(b, Box2D) else Box2D.from_array(b)
        if box.x1 < 0 or box.y1 < 0 or box.x2 > image_w or box.y2 > image_h:
            raise BoxOutOfBounds(f"box {box.as_list()} outside {image_w}x{image_h} image")
        dst = box.scaled(1.0 / downscale).to_quad()
        warp_accumulate(patch, four_point_transform(src, dst), target, mode)
    return target


# .dtr container: magic, u32 height, u32 width, u32 dtype tag, row-major payload
MAGIC = b"DTR1"
_HEADER = struct.Struct("<4sIII")
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}


def write_raster(r: np.ndarray, path) -> None:
    """Write a 2-D array; float32 data is stored as f32, anything else as f64."""
    r = np.asarray(r)
    if r.ndim != 2:
        raise FormatError(f"raster must be 2-D, got shape {r.shape}")
    dtype = np.dtype("<f4") if r.dtype == np.float32 else np.dtype("<f8")
    payload = np.ascontiguousarray(r, dtype=dtype).tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, r.shape[0], r.shape[1], _TAGS[dtype]))
        fh.write(payload)


def read_raster(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{os.fspath(path)}: truncated header")
    magic, h, w, tag = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{os.fspath(path)}: bad magic {magic!r}")
    if tag not in _DTYPES:
        raise FormatError(f"{os.fspath(path)}: unknown dtype tag {tag}")
    dtype = _DTYPES[tag]
    if len(blob) - _HEADER.size != h * w * dtype.itemsize:
        raise FormatError(f"{os.fspath(path)}: payload size does not match {h}x{w}")
    data = np.frombuffer(blob, dtype=dtype, offset=_HEADER.size).reshape(h, w)
    return data.astype(dtype.newbyteorder("="), copy=True)
