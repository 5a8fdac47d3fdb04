import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matchcount.model import FlatKeywords, match_count_reference
from matchcount.select import bucket_kselect, full_scan_counts, sort_topk


def test_full_scan_toy(toy_objects, q1):
    np.testing.assert_array_equal(full_scan_counts(q1, toy_objects), [1, 3, 2])
    np.testing.assert_array_equal(full_scan_counts(q1, FlatKeywords.from_records(toy_objects)),
                                  [1, 3, 2])
    assert len(full_scan_counts(q1, [])) == 0


def test_full_scan_matches_reference():
    from corpus import random_dataset, random_query
    rng = np.random.default_rng(4)
    flat = random_dataset(rng, 200, 4, 10, 3)
    recs = flat.records()
    for qid in range(20):
        q = random_query(rng, qid, 4, 10, 3, 5)
        np.testing.assert_array_equal(full_scan_counts(q, flat),
                                      [match_count_reference(q, o) for o in recs])


def test_sort_topk():
    assert sort_topk([1, 3, 2], 1) == [(1, 3)]
    assert sort_topk([0, 0], 2) == [(0, 0), (1, 0)]
    assert sort_topk([2, 5, 5, 1], 3) == [(1, 5), (2, 5), (0, 2)]


def test_bucket_examples():
    assert bucket_kselect([5, 9, 3, 7, 1], 2, 5) == [(1, 9), (3, 7)]
    assert bucket_kselect([4] * 6, 3) == [(0, 4), (1, 4), (2, 4)]
    assert bucket_kselect([3, 1, 2], 3) == sort_topk([3, 1, 2], 3)
    with pytest.raises(ValueError):
        bucket_kselect([1, 2], 3)
    with pytest.raises(ValueError):
        bucket_kselect([1, 2], 1, bucket_num=1)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 2**20 - 1), min_size=1, max_size=400), st.data())
def test_bucket_equals_sort(values, data):
    k = data.draw(st.integers(1, len(values)))
    b = data.draw(st.sampled_from([2, 3, 16, 1024]))
    top, iters = bucket_kselect(values, k, b, return_iterations=True)
    assert top == sort_topk(values, k)
    if b == 1024:
        assert iters <= 4


def test_bucket_two_value_adversarial():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 3000))
        arr = np.where(rng.random(n) < 0.5, 0, 2**20 - 1)
        k = int(rng.integers(1, n + 1))
        top, iters = bucket_kselect(arr, k, return_iterations=True)
        assert top == sort_topk(arr, k) and iters <= 4
