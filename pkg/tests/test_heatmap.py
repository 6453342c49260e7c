import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dense_target.errors import BoxOutOfBounds, FormatError, SpecError
from dense_target.geometry import Box2D
from dense_target.heatmap import (GaussianPatchSpec, build_target_map, gaussian_value, make_gaussian_patch,
                                  read_raster, write_raster)


def closed_form_map(box, image_h, image_w, spec, downscale):
    """Brute-force oracle: the isotropic formula evaluated per map pixel, sigma scaled to the box."""
    mh, mw = math.ceil(image_h / downscale), math.ceil(image_w / downscale)
    cx = (box[0] + box[2]) / 2 / downscale
    cy = (box[1] + box[3]) / 2 / downscale
    sx = spec.sigma * (box[2] - box[0]) / spec.size / downscale
    sy = spec.sigma * (box[3] - box[1]) / spec.size / downscale
    out = np.zeros((mh, mw))
    for i in range(mh):
        for j in range(mw):
            dx, dy = j + 0.5 - cx, i + 0.5 - cy
            out[i, j] = math.exp(-4 * math.log(2) * ((dx / sx) ** 2 + (dy / sy) ** 2))
    return out


class TestPatch:
    def test_defaults(self):
        assert GaussianPatchSpec() == GaussianPatchSpec(120, 40.0)

    def test_invalid(self):
        with pytest.raises(SpecError):
            GaussianPatchSpec(2, 1.0)
        with pytest.raises(SpecError):
            GaussianPatchSpec(10, 0.0)

    def test_center_value(self):
        assert gaussian_value(0.0, 0.0, 40.0) == 1.0

    def test_half_max_at_half_sigma(self):
        for sigma in (1.0, 7.5, 40.0):
            assert gaussian_value(sigma / 2, 0.0, sigma) == pytest.approx(0.5, abs=1e-15)

    def test_default_patch_half_max_radius(self):
        # size 120, sigma 40: 20 px from the center is half maximum
        assert abs(gaussian_value(20.0, 0.0, 40.0) - 0.5) < 1e-9
        assert abs(gaussian_value(12.0, 16.0, 40.0) - 0.5) < 1e-9

    def test_even_patch_center_pixels(self):
        p = make_gaussian_patch(GaussianPatchSpec(120, 40))
        assert p.shape == (120, 120)
        expected = math.exp(-4 * math.log(2) * 0.5 / 40 ** 2)
        np.testing.assert_allclose(p[59:61, 59:61], expected, rtol=1e-15)
        assert p.max() == p[59, 59]

    def test_odd_patch_peak_is_one(self):
        p = make_gaussian_patch(GaussianPatchSpec(11, 4))
        assert p[5, 5] == 1.0
        assert p.max() == 1.0

    def test_patch_matches_formula(self):
        p = make_gaussian_patch(GaussianPatchSpec(9, 3.0))
        for i in range(9):
            for j in range(9):
                assert p[i, j] == pytest.approx(gaussian_value(j + 0.5 - 4.5, i + 0.5 - 4.5, 3.0), rel=1e-14)


class TestTargetMap:
    def test_empty(self):
        m = build_target_map([], 30, 41, downscale=2)
        assert m.shape == (15, 21)
        assert not m.any()

    def test_single_box_matches_closed_form(self):
        spec = GaussianPatchSpec()
        box = (20, 20, 60, 60)
        m = build_target_map([Box2D(*box)], 128, 128, spec, 2)
        assert m.shape == (64, 64)
        i, j = np.unravel_index(np.argmax(m), m.shape)
        assert abs(j + 0.5 - 20) <= 0.5 and abs(i + 0.5 - 20) <= 0.5
        oracle = closed_form_map(box, 128, 128, spec, 2)
        inside = np.zeros_like(m, dtype=bool)
        inside[10:30, 10:30] = True
        assert np.abs(m - oracle)[inside].max() < 1e-3
        assert not m[~inside].any()
        # the peak pixel sits half a pixel off the true center in each axis
        sigma_map = 40 * 20 / 120
        assert m.max() == pytest.approx(math.exp(-4 * math.log(2) * 0.5 / sigma_map ** 2), abs=1e-3)

    def test_rectangular_box_is_anisotropic(self):
        spec = GaussianPatchSpec()
        box = (10, 30, 90, 50)
        m = build_target_map([box], 100, 100, spec, 2)
        oracle = closed_form_map(box, 100, 100, spec, 2)
        inside = np.zeros_like(m, dtype=bool)
        inside[15:25, 5:45] = True
        assert np.abs(m - oracle)[inside].max() < 1e-3

    def test_mirror_symmetry(self):
        m = build_target_map([(8, 10, 28, 30), (32, 10, 52, 30)], 40, 60, downscale=2, mode="max")
        np.testing.assert_allclose(m, m[:, ::-1], atol=1e-6)

    def test_out_of_bounds(self):
        with pytest.raises(BoxOutOfBounds):
            build_target_map([(0, 0, 70, 10)], 64, 64)

    def test_add_mode_can_exceed_one(self):
        boxes = [(10, 10, 50, 50), (12, 12, 52, 52)]
        assert build_target_map(boxes, 64, 64, mode="add").max() > 1.0
        assert build_target_map(boxes, 64, 64, mode="max").max() <= 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50), st.integers(2, 14), st.integers(2, 14)),
                    min_size=1, max_size=8))
    def test_max_mode_bounded(self, specs):
        boxes = [(x, y, x + w, y + h) for x, y, w, h in specs]
        m = build_target_map(boxes, 64, 64, downscale=1, mode="max")
        assert m.max() <= 1.0 and m.min() >= 0.0

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 40), st.integers(0, 40), st.integers(24, 60))
    def test_monotone_along_rays(self, x, y, s):
        box = (x, y, x + s, y + s)
        m = build_target_map([box], 128, 128, downscale=2)
        cx, cy = (2 * x + s) / 4, (2 * y + s) / 4
        i, j = int(cy), int(cx)
        for di, dj in ((0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (-1, -1)):
            vals = []
            a, b = i, j
            while 0 <= a < 64 and 0 <= b < 64 and m[a, b] > 0:
                vals.append(m[a, b])
                a, b = a + di, b + dj
            assert all(v2 <= v1 + 1e-3 for v1, v2 in zip(vals, vals[1:]))


class TestRasterIO:
    def test_roundtrip_small(self, tmp_path):
        r = np.arange(9, dtype=np.float32).reshape(3, 3) * 0.37
        write_raster(r, tmp_path / "a.dtr")
        back = read_raster(tmp_path / "a.dtr")
        assert back.dtype == np.float32
        assert back.tobytes() == r.tobytes()

    def test_roundtrip_gaussian_map(self, tmp_path):
        m = build_target_map([(10, 10, 90, 70)], 128, 128)
        write_raster(m, tmp_path / "m.dtr")
        back = read_raster(tmp_path / "m.dtr")
        assert np.abs(back - m).max() == 0
        assert back.tobytes() == m.tobytes()

    def test_header_layout(self, tmp_path):
        write_raster(np.zeros((2, 5), dtype=np.float32), tmp_path / "z.dtr")
        blob = (tmp_path / "z.dtr").read_bytes()
        assert blob[:4] == b"DTR1"
        assert int.from_bytes(blob[4:8], "little") == 2
        assert int.from_bytes(blob[8:12], "little") == 5
        assert int.from_bytes(blob[12:16], "little") == 1
        assert len(blob) == 16 + 2 * 5 * 4

    def test_bad_magic(self, tmp_path):
        write_raster(np.zeros((2, 2), dtype=np.float32), tmp_path / "z.dtr")
        blob = bytearray((tmp_path / "z.dtr").read_bytes())
        blob[:4] = b"XXXX"
        (tmp_path / "z.dtr").write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            read_raster(tmp_path / "z.dtr")

    def test_size_mismatch(self, tmp_path):
        write_raster(np.zeros((2, 2), dtype=np.float32), tmp_path / "z.dtr")
        blob = (tmp_path / "z.dtr").read_bytes()
        (tmp_path / "z.dtr").write_bytes(blob[:-4])
        with pytest.raises(FormatError):
            read_raster(tmp_path / "z.dtr")

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            read_raster(tmp_path / "nope.dtr")
