import numpy as np
import pytest
from hypothesis import given, strategies as st

from guidedseg.core import ClassCatalog, HardLabelMap, InvalidInput, InvalidMask, SoftPredictionMap
from guidedseg.uiou import (
    TallyTable,
    ThetaOutOfRange,
    check_separation,
    default_thetas,
    merge_tallies,
    tally,
    threshold_to_hard,
    uiou_curve,
    uiou_score,
)
from guidedseg.synthetic import random_distribution_map

from .oracles import brute_force_tally, confusion_mean_iou, uiou_from_counts

CAT19 = ClassCatalog()
INV = CAT19.invalid_code


def hard(a):
    return HardLabelMap(np.asarray(a))


def mask(a):
    return InvalidMask(np.asarray(a, dtype=bool))


def test_threshold_examples():
    v = np.zeros((1, 1, 19))
    v[0, 0, :2] = (0.7, 0.3)
    s = SoftPredictionMap(v)
    assert threshold_to_hard(s, 0.5).labels[0, 0] == 0
    assert threshold_to_hard(s, 0.8).labels[0, 0] == INV
    assert threshold_to_hard(s, 0.7).labels[0, 0] == 0  # comparison is >=


def test_theta_one_over_c_never_invalidates():
    s = SoftPredictionMap(np.full((3, 3, 19), 1 / 19))
    assert np.all(threshold_to_hard(s, 1 / 19).labels == 0)


def test_theta_range():
    s = SoftPredictionMap(np.full((1, 1, 19), 1 / 19))
    for th in (0.01, 1.01):
        with pytest.raises(ThetaOutOfRange):
            threshold_to_hard(s, th)


def test_two_by_two_example():
    # GT [c c; c c'], J [1 0; 0 0], prediction [invalid c; c'' c]; counted
    # pixel by pixel from the set definitions
    c, c2, c3 = 2, 5, 7
    gt = hard([[c, c], [c, c2]])
    j = mask([[1, 0], [0, 0]])
    pred = hard([[INV, c], [c3, c]])
    t = tally(pred, gt, j, CAT19)
    assert (t.tp[c], t.ti[c], t.fn[c], t.fp[c], t.fi[c]) == (1, 1, 1, 1, 0)
    assert (t.tp[c2], t.fp[c2], t.fn[c2]) == (0, 0, 1)
    assert (t.tp[c3], t.fp[c3], t.fn[c3]) == (0, 1, 0)
    assert np.array_equal(t.as_array(), brute_force_tally(pred.labels, gt.labels, j.mask, 19, INV))
    per, _ = uiou_score(t)
    assert per[c] == 2 / 4


def test_perfect_prediction():
    gt = np.arange(16).reshape(4, 4) % 19
    t = tally(hard(gt), hard(gt), mask(np.zeros((4, 4))), CAT19)
    assert not t.fp.any() and not t.fn.any() and not t.ti.any() and not t.fi.any()
    per, mean = uiou_score(t)
    assert mean == 1.0
    assert np.all(per[np.isfinite(per)] == 1.0)


def test_all_invalid_on_valid_gt():
    gt = np.full((3, 3), 4)
    t = tally(hard(np.full((3, 3), INV)), hard(gt), mask(np.zeros((3, 3))), CAT19)
    assert t.fi[4] == 9 and t.as_array().sum() == 9
    per, mean = uiou_score(t)
    assert per[4] == 0.0 and mean == 0.0


def test_ignore_pixels_skipped_even_when_invalid():
    gt = hard([[255, 1]])
    t = tally(hard([[2, 1]]), gt, mask([[1, 0]]), CAT19)
    assert t.as_array().sum() == 1 and t.tp[1] == 1


def test_label_validation():
    with pytest.raises(InvalidInput):
        tally(hard([[0]]), hard([[19]]), mask([[0]]), CAT19)
    with pytest.raises(InvalidInput):
        tally(hard([[255]]), hard([[0]]), mask([[0]]), CAT19)


def test_merge_is_monoid():
    rng = np.random.default_rng(1)
    tabs = [TallyTable(*rng.integers(0, 50, size=(5, 4))) for _ in range(3)]
    z = TallyTable.zeros(4)
    a, b, c = tabs
    assert a + z == a
    assert a + b == b + a
    assert (a + b) + c == a + (b + c)
    assert merge_tallies(tabs, 4) == a + b + c
    with pytest.raises(InvalidInput):
        TallyTable(*(-np.ones((5, 4), dtype=int)))


def test_hard_onehot_curve_is_constant():
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 19, size=(6, 6))
    v = np.zeros((6, 6, 19))
    np.put_along_axis(v, labels[..., None], 1.0, axis=2)
    gt = rng.integers(0, 19, size=(6, 6))
    curve = uiou_curve([SoftPredictionMap(v)], [hard(gt)], [mask(np.zeros((6, 6)))])
    assert np.all(curve.mean == curve.mean[0])
    _, iou = confusion_mean_iou([labels], [gt], 19)
    assert curve.mean[0] == iou


def test_default_grid():
    g = default_thetas(19)
    assert len(g) == 101 and g[0] == 1 / 19 and g[-1] == 1.0


def random_instance(rng, h, w, c=19, ignore_frac=0.1):
    s = random_distribution_map(rng, h, w, c, temperature=rng.uniform(0.2, 2.0))
    gt = rng.integers(0, c, size=(h, w))
    gt[rng.random((h, w)) < ignore_frac] = 255
    j = rng.random((h, w)) < 0.3
    return s, gt, j


@given(st.integers(0, 2**31))
def test_curve_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cat = ClassCatalog.generic(5)
    inst = [random_instance(rng, 8, 8, 5) for _ in range(2)]
    thetas = np.linspace(0.2, 1.0, 9)
    curve = uiou_curve([i[0] for i in inst], [hard(i[1]) for i in inst],
                       [mask(i[2]) for i in inst], thetas, cat)
    for k, th in enumerate(thetas):
        counts = np.zeros((5, 5), dtype=np.int64)
        for s, gt, j in inst:
            lab = np.argmax(s.values, 2)
            conf = s.values.max(2)
            pred = lab if k == 0 else np.where(conf >= th, lab, cat.invalid_code)
            counts += brute_force_tally(pred, gt, j, 5, cat.invalid_code)
        assert np.array_equal(curve.tallies[k].as_array(), counts)
        np.testing.assert_array_equal(curve.per_class[k], uiou_from_counts(counts))


@given(st.integers(0, 2**31))
def test_first_point_is_confusion_matrix_iou(seed):
    rng = np.random.default_rng(seed)
    inst = [random_instance(rng, int(rng.integers(1, 17)), int(rng.integers(1, 17)))
            for _ in range(3)]
    curve = uiou_curve([i[0] for i in inst], [hard(i[1]) for i in inst],
                       [mask(i[2]) for i in inst], default_thetas(19, 5))
    preds = [np.argmax(i[0].values, 2) for i in inst]
    per, mean = confusion_mean_iou(preds, [i[1] for i in inst], 19)
    np.testing.assert_array_equal(curve.per_class[0], per)
    assert curve.mean[0] == mean or (np.isnan(mean) and np.isnan(curve.mean[0]))


@given(st.integers(0, 2**31))
def test_subset_monotonicity_and_partition(seed):
    rng = np.random.default_rng(seed)
    s, gt, j = random_instance(rng, 10, 10)
    base_lab = np.argmax(s.values, 2)
    conf = s.values.max(2)
    valid = gt != 255
    for th in default_thetas(19, 11):
        pred = threshold_to_hard(s, th).labels
        for c in range(19):
            fn_th = valid & (gt == c) & (pred != c) & (pred != INV)
            fn_0 = valid & (gt == c) & (base_lab != c)
            fp_th = valid & (gt != c) & (pred == c)
            fp_0 = valid & (gt != c) & (base_lab == c)
            assert not np.any(fn_th & ~fn_0)
            assert not np.any(fp_th & ~fp_0)
    t0 = tally(hard(base_lab), hard(gt), mask(j), CAT19)
    for th in default_thetas(19, 11):
        t = tally(threshold_to_hard(s, th), hard(gt), mask(j), CAT19)
        assert np.array_equal(t0.tp + t0.fn, t.tp + t.fn + t.ti + t.fi)
    assert conf.shape == gt.shape


def test_check_separation_examples():
    def soft(confs):
        confs = np.asarray(confs, dtype=float)
        v = np.zeros(confs.shape + (4,))
        v[..., 0] = confs
        v[..., 1:] = ((1 - confs) / 3)[..., None]
        return SoftPredictionMap(v)

    s = soft([[0.4, 0.3, 0.6, 0.9]])
    j = mask([[1, 1, 0, 0]])
    assert check_separation([s], [j]) == (0.4, 0.6)
    s = soft([[0.9, 0.5]])
    assert check_separation([s], [mask([[1, 0]])]) is None
    # empty sides use the vacuous bounds
    assert check_separation([soft([[0.5]])], [mask([[0]])]) == (0.25, 0.5)
    assert check_separation([soft([[0.5]])], [mask([[1]])]) == (0.5, 1.0)


@given(st.integers(0, 2**31))
def test_separation_construction(seed):
    rng = np.random.default_rng(seed)
    j = rng.random((6, 6)) < 0.4
    conf = np.where(j, rng.uniform(0.05, 0.3, (6, 6)), rng.uniform(0.6, 1.0, (6, 6)))
    c = 19
    conf = np.maximum(conf, 1 / c)
    v = np.empty((6, 6, c))
    v[..., 0] = conf
    v[..., 1:] = ((1 - conf) / (c - 1))[..., None]
    sep = check_separation([SoftPredictionMap(v)], [mask(j)])
    assert sep is not None
    assert sep[0] <= 0.3 and sep[1] >= 0.6


def test_theorem_boundary_at_the_returned_bound():
    """With the >= rule, the invalid pixel at exactly theta_1 is still predicted.

    Here it is the only invalid misprediction, so UIoU at the returned bound
    equals IoU; one ulp above it the strict gain appears.
    """
    c = 3
    cat = ClassCatalog.generic(c)
    v = np.array([[[0.4, 0.3, 0.3], [0.9, 0.05, 0.05]]])
    s = SoftPredictionMap(v)
    gt = hard([[1, 0]])
    j = mask([[1, 0]])
    th1, th2 = check_separation([s], [j])
    assert th1 == 0.4
    iou = uiou_curve([s], [gt], [j], [1 / c], cat).per_class[0, 1]
    at = uiou_curve([s], [gt], [j], [th1], cat).per_class[0, 1]
    above = uiou_curve([s], [gt], [j], [np.nextafter(th1, th2)], cat).per_class[0, 1]
    assert at == iou == 0.0
    assert above > iou
