import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from guidedseg.geometry import (
    THETA_REL,
    THETA_SEC,
    MatchSet,
    NeighborTables,
    NoKeypoints,
    detect_and_match,
    filter_matches,
    read_match_file,
    write_match_file,
)


def test_thresholds():
    assert THETA_SEC == 0.7 and THETA_REL == 20


def kept(d):
    dark, day, _ = filter_matches(NeighborTables.from_distances(np.asarray(d, dtype=float)))
    return set(zip(dark.tolist(), day.tolist()))


def test_ratio_test_pass():
    # dark 0 -> day 0 at d2=1, second neighbor at 4: ratio 0.25
    assert (0, 0) in kept([[1.0, 4.0], [9.0, 2.0]])


def test_ratio_test_fail():
    assert (0, 0) not in kept([[1.0, 1.2], [9.0, 0.5]])


def test_global_ratio_rejects():
    # dark 1's match has d2=25 while the best match has d2=1
    d = [[1.0, 50.0, 60.0], [70.0, 25.0, 80.0], [90.0, 95.0, 18.0]]
    k = kept(d)
    assert (0, 0) in k and (2, 2) in k and (1, 1) not in k


def test_non_mutual_rejected():
    # day 0 is the nearest for both dark rows, but prefers dark 1
    d = [[1.0, 10.0], [0.5, 10.0]]
    assert (0, 0) not in kept(d)


def brute_filter(d):
    keep = set()
    best = min(d[i].min() for i in range(len(d)) if np.argmin(d[:, np.argmin(d[i])]) == i) \
        if len(d) else 0
    for i in range(d.shape[0]):
        j = int(np.argmin(d[i]))
        if int(np.argmin(d[:, j])) != i:
            continue
        srt = np.sort(d[i])
        second = srt[1] if len(srt) > 1 else np.inf
        if not (second > 0 and d[i, j] <= 0.7 * second):
            continue
        if d[i, j] > 20 * best:
            continue
        keep.add((i, j))
    return keep


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                  elements=st.floats(0.0, 100.0)))
def test_filter_matches_oracle(d):
    assert kept(d) == brute_filter(d)


def corner_image(rng, h=120, w=160):
    img = np.zeros((h, w))
    for _ in range(40):
        y, x = rng.integers(5, h - 20), rng.integers(5, w - 20)
        img[y:y + rng.integers(4, 15), x:x + rng.integers(4, 15)] = rng.uniform(50, 255)
    return img + rng.normal(scale=1.0, size=img.shape)


def test_identical_images_match_in_place(rng):
    img = corner_image(rng)
    m = detect_and_match(img, img)
    assert len(m) > 10
    assert np.median(np.linalg.norm(m.p_day - m.p_dark, axis=1)) == 0


def test_shifted_image(rng):
    img = corner_image(rng, 120, 180)
    shifted = np.zeros_like(img)
    shifted[:, 10:] = img[:, :-10]
    m = detect_and_match(img, shifted)
    disp = np.median(m.p_dark - m.p_day, axis=0)
    assert np.allclose(disp, [10, 0], atol=1.0)


def test_flat_image_has_no_keypoints():
    with pytest.raises(NoKeypoints):
        detect_and_match(np.full((50, 50), 128.0), np.full((50, 50), 128.0))


def test_match_file_round_trip(tmp_path, rng):
    m = MatchSet(rng.uniform(0, 100, (7, 2)), rng.uniform(0, 100, (7, 2)))
    path = tmp_path / "m.txt"
    write_match_file(path, m)
    back = read_match_file(path)
    assert np.array_equal(back.p_day, m.p_day) and np.array_equal(back.p_dark, m.p_dark)


def test_match_file_comments_and_errors(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("# header\n1 2 3 4  # trailing\n\n5 6 7 8\n")
    m = read_match_file(p)
    assert m.p_day.tolist() == [[1, 2], [5, 6]] and m.p_dark.tolist() == [[3, 4], [7, 8]]
    p.write_text("1 2 3\n")
    with pytest.raises(ValueError, match="1"):
        read_match_file(p)


def test_within_bounds():
    m = MatchSet([[0, 0], [9, 4]], [[1, 1], [2, 2]])
    assert m.within_bounds((5, 10), (5, 10))
    assert not m.within_bounds((4, 10), (5, 10))
