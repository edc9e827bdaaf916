import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovseg.errors import BadFoldIndex, BadUniverse, EmptyEvaluation, ShapeMismatch, UnknownLabel
from ovseg.folds import PASCAL_CATEGORIES, FoldSpec, all_folds, folds_to_json, make_fold
from ovseg.metrics import miou
from ovseg.synthetic import one_hot_mask


from helpers import brute_force_miou


class TestFolds:
    def test_fold0_canonical(self):
        f = make_fold(0, PASCAL_CATEGORIES)
        assert f.test_categories == ("aeroplane", "bicycle", "bird", "boat", "bottle")

    def test_fold1_canonical(self):
        f = make_fold(1, PASCAL_CATEGORIES)
        assert f.test_categories == ("bus", "car", "cat", "chair", "cow")

    def test_fold2_canonical(self):
        f = make_fold(2, PASCAL_CATEGORIES)
        assert f.test_categories == ("diningtable", "dog", "horse", "motorbike", "person")

    def test_fold3_canonical(self):
        f = make_fold(3, PASCAL_CATEGORIES)
        assert f.test_categories == ("potted plant", "sheep", "sofa", "train", "tv/monitor")

    def test_shuffled_input_still_matches_canonical_splits(self):
        shuffled = list(PASCAL_CATEGORIES)
        np.random.default_rng(0).shuffle(shuffled)
        f = make_fold(2, shuffled)
        assert f.test_categories == make_fold(2, PASCAL_CATEGORIES).test_categories

    def test_train_test_disjoint_and_complete(self):
        for f in all_folds(PASCAL_CATEGORIES):
            assert not set(f.test_categories) & set(f.train_categories)
            assert set(f.test_categories) | set(f.train_categories) == set(PASCAL_CATEGORIES)
            assert len(f.test_categories) == 5 and len(f.train_categories) == 15

    def test_folds_partition_universe(self):
        tests = [set(f.test_categories) for f in all_folds(PASCAL_CATEGORIES)]
        assert set.union(*tests) == set(PASCAL_CATEGORIES)
        for a in range(4):
            for b in range(a + 1, 4):
                assert not tests[a] & tests[b]

    def test_synthetic_universe_by_index(self):
        names = tuple(f"u{i}" for i in range(20))
        f = make_fold(1, names)
        assert f.test_categories == ("u5", "u6", "u7", "u8", "u9")

    def test_bad_fold_index(self):
        with pytest.raises(BadFoldIndex):
            make_fold(4, PASCAL_CATEGORIES)

    def test_bad_universe(self):
        with pytest.raises(BadUniverse):
            make_fold(0, PASCAL_CATEGORIES[:19])
        with pytest.raises(BadUniverse):
            make_fold(0, ("dup",) * 20)

    def test_json_export(self):
        import json

        payload = json.loads(folds_to_json(PASCAL_CATEGORIES))
        assert len(payload) == 4
        assert payload[3]["test_categories"][-1] == "tv/monitor"


class TestOneHot:
    def test_all_background(self):
        y = one_hot_mask(np.zeros((3, 3), dtype=int), ("a", "b"))
        assert y.data.sum() == 0.0

    def test_single_pixel_indicator(self):
        lm = np.zeros((2, 2), dtype=int)
        lm[1, 0] = 2
        y = one_hot_mask(lm, ("a", "b", "c"))
        assert y.data.sum() == 1.0
        assert y.data[1, 0, 1] == 1.0

    def test_unknown_label(self):
        with pytest.raises(UnknownLabel):
            one_hot_mask(np.array([[3]]), ("a", "b"))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_argmax(self, seed):
        rng = np.random.default_rng(seed)
        lm = rng.integers(0, 4, size=(5, 5))
        y = one_hot_mask(lm, ("a", "b", "c")).data
        recovered = np.where(y.sum(axis=2) > 0, y.argmax(axis=2) + 1, 0)
        np.testing.assert_array_equal(recovered, lm)

    def test_per_pixel_sum_at_most_one(self):
        rng = np.random.default_rng(1)
        lm = rng.integers(0, 3, size=(6, 6))
        y = one_hot_mask(lm, ("a", "b")).data
        assert y.sum(axis=2).max() <= 1.0


class TestMiou:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        maps = [rng.integers(0, 4, size=(6, 6)) for _ in range(3)]
        report = miou(maps, maps, ["a", "b", "c"])
        assert report.miou == 1.0
        assert all(v == 1.0 for v in report.per_class_iou.values())

    def test_fully_disjoint(self):
        pred = np.full((4, 4), 1)
        gt = np.full((4, 4), 2)
        report = miou([pred], [gt], ["a", "b"])
        assert report.per_class_iou["a"] == 0.0
        assert report.per_class_iou["b"] == 0.0

    def test_hand_counted_case(self):
        # class a: 3 TP, 1 FP, 1 FN -> IoU 0.6
        pred = np.zeros((4, 4), dtype=int)
        gt = np.zeros((4, 4), dtype=int)
        pred[0, :3] = 1
        gt[0, :3] = 1
        pred[1, 0] = 1  # FP
        gt[2, 0] = 1  # FN
        report = miou([pred], [gt], ["a"])
        assert report.per_class_iou["a"] == pytest.approx(0.6, abs=1e-15)

    def test_absent_class_convention(self):
        pred = np.zeros((2, 2), dtype=int)
        gt = np.zeros((2, 2), dtype=int)
        report = miou([pred], [gt], ["a", "b"])
        assert report.per_class_iou == {"a": 1.0, "b": 1.0}
        assert report.absent_classes == ("a", "b")

    def test_image_order_invariance(self):
        rng = np.random.default_rng(3)
        preds = [rng.integers(0, 3, size=(5, 5)) for _ in range(4)]
        gts = [rng.integers(0, 3, size=(5, 5)) for _ in range(4)]
        a = miou(preds, gts, ["x", "y"])
        b = miou(preds[::-1], gts[::-1], ["x", "y"])
        assert a.per_class_iou == b.per_class_iou

    def test_class_order_invariance(self):
        rng = np.random.default_rng(4)
        pred = rng.integers(0, 3, size=(8, 8))
        gt = rng.integers(0, 3, size=(8, 8))
        fwd = miou([pred], [gt], ["x", "y"])
        swap = {1: 2, 2: 1, 0: 0}
        remap = np.vectorize(swap.get)
        rev = miou([remap(pred)], [remap(gt)], ["y", "x"])
        assert fwd.per_class_iou == rev.per_class_iou
        assert fwd.miou == rev.miou

    def test_errors(self):
        with pytest.raises(EmptyEvaluation):
            miou([], [], ["a"])
        with pytest.raises(ShapeMismatch):
            miou([np.zeros((2, 2))], [np.zeros((3, 3))], ["a"])
        with pytest.raises(ShapeMismatch):
            miou([np.zeros((2, 2))], [], ["a"])


def test_miou_matches_brute_force_on_random_cases():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n_imgs = int(rng.integers(1, 4))
        preds = [rng.integers(0, 4, size=(8, 8)) for _ in range(n_imgs)]
        gts = [rng.integers(0, 4, size=(8, 8)) for _ in range(n_imgs)]
        # sometimes blank out a class entirely to hit the absent convention
        if rng.random() < 0.3:
            preds = [np.where(p == 3, 0, p) for p in preds]
            gts = [np.where(g == 3, 0, g) for g in gts]
        report = miou(preds, gts, ["a", "b", "c"])
        oracle_ious, oracle_mean = brute_force_miou(preds, gts, 3)
        for name, oracle in zip(["a", "b", "c"], oracle_ious):
            assert abs(report.per_class_iou[name] - oracle) <= 1e-12
        assert abs(report.miou - oracle_mean) <= 1e-12
