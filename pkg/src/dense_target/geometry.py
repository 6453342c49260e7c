"""Boxes, IoU, four-point homographies and homography warping.

Boxes use a half-open corner convention: a box covers ``[x1, x2) x [y1, y2)``
and pixel ``(i, j)`` of a raster has its center at ``(j + 0.5, i + 0.5)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateQuad, InvalidBox


@dataclass(frozen=True)
class Box2D:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBox(f"non-finite box {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidBox(f"degenerate box {coords}")

    @classmethod
    def from_array(cls, a) -> "Box2D":
        x1, y1, x2, y2 = (float(v) for v in a)
        return cls(x1, y1, x2, y2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def scaled(self, s: float) -> "Box2D":
        return Box2D(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)

    def to_quad(self) -> "Quad":
        return Quad(((self.x1, self.y1), (self.x2, self.y1),
                     (self.x2, self.y2), (self.x1, self.y2)))


def iou(a: Box2D, b: Box2D) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` xyxy arrays -> ``(N, M)``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


@dataclass(frozen=True)
class Quad:
    """Four corners, clockwise from top-left in image (y-down) coordinates."""

    points: tuple

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) != 4:
            raise DegenerateQuad(f"quad needs 4 corners, got {len(pts)}")
        object.__setattr__(self, "points", pts)
        if _segments_cross(pts[0], pts[1], pts[2], pts[3]) or \
                _segments_cross(pts[1], pts[2], pts[3], pts[0]):
            raise DegenerateQuad(f"self-intersecting quad {pts}")
        if self.signed_area() <= 0:
            raise DegenerateQuad(f"quad must have positive clockwise area: {pts}")

    def signed_area(self) -> float:
        s = 0.0
        for k in range(4):
            x0, y0 = self.points[k]
            x1, y1 = self.points[(k + 1) % 4]
            s += x0 * y1 - x1 * y0
        return 0.5 * s

    def as_array(self) -> np.ndarray:
        return np.array(self.points, dtype=np.float64)


def _solve_partial_pivot(a: np.ndarray, b: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    a = a.astype(np.float64, copy=True)
    b = b.astype(np.float64, copy=True)
    n = len(b)
    scale = max(np.abs(a).max(), 1.0)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) <= tol * scale:
            raise DegenerateQuad("singular four-point system (collinear corners?)")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        f = a[col + 1:, col] / a[col, col]
        a[col + 1:, col:] -= f[:, None] * a[col, col:]
        b[col + 1:] -= f * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1:] @ x[row + 1:]) / a[row, row]
    return x


@dataclass(frozen=True, eq=False)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64).reshape(3, 3)
        if m[2, 2] != 0:
            m = m / m[2, 2]
        if not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) <= 1e-12:
            raise DegenerateQuad("homography is not invertible")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def project(self, pts) -> np.ndarray:
        """Map ``(N, 2)`` points through the homography."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        hom = np.hstack([pts, np.ones((len(pts), 1))]) @ self.matrix.T
        return hom[:, :2] / hom[:, 2:3]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)


def four_point_transform(src: Quad, dst: Quad) -> Homography:
    """Homography taking each corner of ``src`` to the matching corner of ``dst``.

    Direct linear transform with ``h33 = 1``: eight unknowns, two equations per
    correspondence.
    """
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for k, ((x, y), (u, v)) in enumerate(zip(src.points, dst.points)):
        a[2 * k] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * k + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * k] = u
        b[2 * k + 1] = v
    h = _solve_partial_pivot(a, b)
    return Homography(np.append(h, 1.0).reshape(3, 3))


class CompositionMode(str, enum.Enum):
    ADD = "add"
    MAX = "max"


def warp_accumulate(patch: np.ndarray, h: Homography, target: np.ndarray,
                    mode: CompositionMode | str = CompositionMode.MAX) -> None:
    """Warp ``patch`` through ``h`` and compose it into ``target`` in place.

    The patch occupies ``[0, w) x [0, h)`` in its own coordinates. Each target
    pixel whose center falls inside the projected footprint is inverse-mapped
    into the patch and sampled bilinearly; sample positions within the
    footprint but past the outermost pixel centers use the edge pixels.
    Pixels outside the footprint are left untouched.
    """
    mode = CompositionMode(mode)
    ph, pw = patch.shape
    th, tw = target.shape
    corners = h.project([(0, 0), (pw, 0), (pw, ph), (0, ph)])
    x0 = max(int(math.floor(corners[:, 0].min() - 0.5)), 0)
    x1 = min(int(math.ceil(corners[:, 0].max() + 0.5)), tw)
    y0 = max(int(math.floor(corners[:, 1].min() - 0.5)), 0)
    y1 = min(int(math.ceil(corners[:, 1].max() + 0.5)), th)
    if x0 >= x1 or y0 >= y1:
        return

    inv = h.inverse().matrix
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    den = inv[2, 0] * gx + inv[2, 1] * gy + inv[2, 2]
    u = (inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]) / den
    v = (inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]) / den
    inside = (den > 0) & (u >= 0) & (u < pw) & (v >= 0) & (v < ph)
    if not inside.any():
        return

    # continuous pixel-index coordinates, clamped to the outermost centers
    cu = np.clip(u[inside] - 0.5, 0, pw - 1)
    cv = np.clip(v[inside] - 0.5, 0, ph - 1)
    j0 = np.minimum(np.floor(cu).astype(np.intp), pw - 2) if pw > 1 else np.zeros(cu.shape, np.intp)
    i0 = np.minimum(np.floor(cv).astype(np.intp), ph - 2) if ph > 1 else np.zeros(cv.shape, np.intp)
    fu = cu - j0
    fv = cv - i0
    j1 = np.minimum(j0 + 1, pw - 1)
    i1 = np.minimum(i0 + 1, ph - 1)
    p = np.asarray(patch, dtype=np.float64)
    sample = ((1 - fv) * ((1 - fu) * p[i0, j0] + fu * p[i0, j1])
              + fv * ((1 - fu) * p[i1, j0] + fu * p[i1, j1]))

    region = target[y0:y1, x0:x1]
    if mode is CompositionMode.ADD:
        region[inside] += sample
    else:
        region[inside] = np.maximum(region[inside], sample)
