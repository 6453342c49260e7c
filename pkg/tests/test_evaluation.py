from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dense_target.errors import ImageIdMismatch, UnsortedInput
from dense_target.evaluation import CSV_HEADER, average_precision, evaluate, match_detections
from dense_target.geometry import Box2D
from dense_target.postprocess import Detection

from instances import golden_instance, random_eval_instance, to_arrays
from oracles import naive_evaluate, naive_match

DATA = Path(__file__).parent / "data"


class TestMatching:
    def test_greedy_claim(self):
        gt = np.array([[0, 0, 10, 10], [0, 0, 10, 9.0]])
        dets = np.array([[0, 0, 10, 9.5], [0, 0, 10, 10.0]])
        # first detection takes its best gt; the second gets what is left
        assert list(match_detections(dets, [0.9, 0.8], gt, 0.5)) == [0, 1]

    def test_unsorted(self):
        with pytest.raises(UnsortedInput):
            match_detections(np.zeros((2, 4)) + [0, 0, 1, 1], [0.1, 0.9], np.zeros((0, 4)), 0.5)

    def test_matches_oracle_1000(self):
        rng = np.random.default_rng(77)
        for _ in range(1000):
            n_d, n_g = rng.integers(0, 6, 2)
            d = rng.integers(0, 12, (n_d, 2)).astype(float)
            d = np.hstack([d, d + rng.integers(1, 8, (n_d, 2))])
            g = rng.integers(0, 12, (n_g, 2)).astype(float)
            g = np.hstack([g, g + rng.integers(1, 8, (n_g, 2))])
            s = np.sort(rng.integers(0, 4, n_d) / 4)[::-1]
            t = float(rng.choice([0.3, 0.5, 0.75]))
            assert list(match_detections(d, s, g, t)) == naive_match(d.tolist(), g.tolist(), t)


class TestAP:
    def test_perfect(self):
        assert average_precision([0.9, 0.8], [True, True], 2) == 1.0

    def test_half_recall(self):
        # recall 0.5 reached at precision 1; levels 0..50 of 101 count
        assert average_precision([0.9], [True], 2) == pytest.approx(51 / 101, abs=1e-15)

    def test_false_positive_first(self):
        # points (r=0, p=0) then (r=1, p=0.5)
        assert average_precision([0.9, 0.8], [False, True], 1) == pytest.approx(0.5, abs=1e-15)

    def test_tied_scores_one_point(self):
        a = average_precision([0.5, 0.5], [False, True], 1)
        b = average_precision([0.5, 0.5], [True, False], 1)
        assert a == b == pytest.approx(0.5, abs=1e-15)

    def test_no_gt(self):
        assert average_precision([0.3], [False], 0) is None

    def test_no_detections(self):
        assert average_precision([], [], 3) == 0.0


class TestEvaluate:
    def test_perfect_detector(self):
        gts = {0: np.array([[0, 0, 10, 10], [20, 20, 30, 30.0]]), 1: np.array([[5, 5, 9, 9.0]])}
        dets = {k: (v, np.linspace(0.9, 0.5, len(v))) for k, v in gts.items()}
        r = evaluate(dets, gts)
        assert (r.ap, r.ap50, r.ap75, r.ar300, r.ar300_50) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_detection_objects_equal_dict_input(self):
        rng = np.random.default_rng(4)
        dets, gts = random_eval_instance(rng)
        objs = [Detection(Box2D.from_array(b), s, k) for k, lst in dets.items() for b, s in lst]
        assert evaluate(objs, gts).csv_row() == evaluate(to_arrays(dets), gts).csv_row()

    def test_no_ground_truth_gives_minus_one(self):
        r = evaluate({0: (np.array([[0, 0, 1, 1.0]]), np.array([0.5]))}, {0: np.zeros((0, 4))})
        assert (r.ap, r.ap50, r.ar300) == (-1.0, -1.0, -1.0)

    def test_unknown_image(self):
        with pytest.raises(ImageIdMismatch):
            evaluate({5: (np.zeros((0, 4)), np.zeros(0))}, {0: np.zeros((0, 4))})

    def test_max_dets(self):
        gts = {0: np.array([[0, 0, 10, 10], [20, 0, 30, 10.0]])}
        dets = {0: (np.array([[0, 0, 10, 10], [20, 0, 30, 10.0]]), np.array([0.9, 0.8]))}
        assert evaluate(dets, gts, max_dets=1).ar300_50 == 0.5

    def test_matches_brute_force_500(self):
        rng = np.random.default_rng(31337)
        for trial in range(500):
            dets, gts = random_eval_instance(rng)
            r = evaluate(to_arrays(dets), gts)
            o = naive_evaluate({k: [(b.tolist(), s) for b, s in v] for k, v in dets.items()},
                               {k: v.tolist() for k, v in gts.items()})
            got = (r.ap, r.ap50, r.ap75, r.ar300, r.ar300_50)
            assert np.max(np.abs(np.array(got) - np.array(o))) <= 1e-12, trial

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_image_order_invariant(self, seed):
        rng = np.random.default_rng(seed)
        dets, gts = random_eval_instance(rng)
        keys = list(gts)[::-1]
        r1 = evaluate(to_arrays(dets), gts)
        r2 = evaluate({k: to_arrays(dets)[k] for k in keys}, {k: gts[k] for k in keys})
        assert r1.csv_row() == r2.csv_row()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_bounds(self, seed):
        dets, gts = random_eval_instance(np.random.default_rng(seed))
        r = evaluate(to_arrays(dets), gts)
        if sum(len(v) for v in gts.values()):
            for v in (r.ap, r.ap50, r.ap75, r.ar300, r.ar300_50):
                assert 0.0 <= v <= 1.0
            assert r.ap50 >= r.ap75 - 1e-12


def test_golden_csv(tmp_path):
    dets, gts = golden_instance()
    r = evaluate(to_arrays(dets), gts)
    r.write(csv_path=tmp_path / "m.csv")
    golden = (DATA / "golden_metrics.csv").read_text()
    assert (tmp_path / "m.csv").read_text() == golden
    assert golden.splitlines()[0] == CSV_HEADER
