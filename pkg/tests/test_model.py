import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matchcount.errors import ConstructionError, DomainError, InvalidRangeError
from matchcount.model import (FlatKeywords, Keyword, ObjectRecord, Query, QueryItem, Schema,
                              encode_relational_query, encode_relational_tuple,
                              equal_width_bins, match_count_reference, window_range)


def test_keyword_order_and_packing():
    assert Keyword(0, 5) < Keyword(1, 0) < Keyword(1, 2)
    assert Keyword(3, 7).packed() == (3 << 32) | 7
    assert len({Keyword(1, 1), Keyword(1, 1)}) == 1


@pytest.mark.parametrize("dim,token", [(-1, 0), (1 << 16, 0), (0, -1), (0, 1 << 32)])
def test_keyword_domain(dim, token):
    with pytest.raises(DomainError):
        Keyword(dim, token)


def test_object_sorted_and_rejects_duplicates():
    o = ObjectRecord(4, [(2, 1), (0, 3)])
    assert o.keywords == (Keyword(0, 3), Keyword(2, 1))
    with pytest.raises(ConstructionError):
        ObjectRecord(0, [(0, 1), (0, 1)])


def test_query_invariants():
    with pytest.raises(ConstructionError):
        Query(0, [], 1)
    with pytest.raises(ConstructionError):
        Query(0, [QueryItem.point(0, 1)], 0)
    with pytest.raises(InvalidRangeError):
        QueryItem(0, 3, 2)


def test_match_count_toy(toy_objects, q1):
    assert match_count_reference(q1, toy_objects[0]) == 1
    assert match_count_reference(q1, toy_objects[1]) == 3
    assert [match_count_reference(q1, o) for o in toy_objects] == [1, 3, 2]


def test_match_count_no_overlap():
    assert match_count_reference(Query(0, [QueryItem(0, 5, 9)]), ObjectRecord(0, [(0, 1)])) == 0


def test_multi_token_dim_counts_each_keyword():
    o = ObjectRecord(0, [(0, 1), (0, 2), (0, 7)])
    assert match_count_reference(Query(0, [QueryItem(0, 0, 5)]), o) == 2


def test_encode_relational_tuple():
    schema = Schema((4, 4, 4), ("A", "B", "C"))
    o = encode_relational_tuple((1, 2, 1), schema)
    assert [(k.dim, k.token) for k in o.keywords] == [(0, 1), (1, 2), (2, 1)]
    assert [(k.dim, k.token) for k in encode_relational_tuple((0, 0), Schema((1, 1))).keywords] \
        == [(0, 0), (1, 0)]
    with pytest.raises(ConstructionError):
        Schema(())
    with pytest.raises(DomainError):
        encode_relational_tuple((4, 0, 0), schema)


def test_encode_relational_query():
    schema = Schema((4, 4, 4), ("A", "B", "C"))
    q = encode_relational_query([("A", 1, 2), ("B", 1, 1), ("C", 2, 3)], 1, schema)
    assert q.items == (QueryItem(0, 1, 2), QueryItem(1, 1, 1), QueryItem(2, 2, 3))
    full = encode_relational_query([(0, 0, 3)], 1, schema)
    assert full.items == (QueryItem(0, 0, 3),)
    with pytest.raises(InvalidRangeError):
        encode_relational_query([(0, 5, 9)], 1, schema)


def test_window_rule_clamps_to_bins():
    schema = Schema((1024,))
    assert encode_relational_query([window_range(0, 30)], 1, schema).items == (QueryItem(0, 0, 80),)
    assert encode_relational_query([window_range(0, 1000)], 1, schema).items == (QueryItem(0, 950, 1023),)
    assert encode_relational_query([window_range(0, 500)], 1, schema).items == (QueryItem(0, 450, 550),)


def test_equal_width_bins():
    b = equal_width_bins(np.array([0.0, 0.5, 1.0]), bins=4)
    np.testing.assert_array_equal(b, [0, 2, 3])
    np.testing.assert_array_equal(equal_width_bins(np.ones(3)), [0, 0, 0])


def test_flat_keywords_roundtrip(toy_objects):
    flat = FlatKeywords.from_records(toy_objects)
    assert flat.records() == toy_objects
    assert flat.record(1) == toy_objects[1]
    tm = FlatKeywords.from_token_matrix(np.array([[1, 2, 1], [2, 1, 2], [1, 2, 2]]))
    assert tm.records() == toy_objects


keywords = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 9)), unique=True, max_size=12)
items = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 9), st.integers(0, 4)), min_size=1, max_size=6)


@settings(max_examples=200, deadline=None)
@given(keywords, items, st.randoms())
def test_count_properties(kws, its, rnd):
    q = Query(0, [QueryItem(d, lo, lo + w) for d, lo, w in its])
    o = ObjectRecord(0, kws)
    c = match_count_reference(q, o)
    assert 0 <= c <= len(q.items) * len(kws)
    shuffled = list(q.items)
    rnd.shuffle(shuffled)
    assert match_count_reference(Query(0, shuffled), o) == c
    # A keyword in an unused dim never changes the count.
    assert match_count_reference(q, ObjectRecord(0, kws + [(9, 0)])) == c
    # A fresh keyword covered by exactly one item raises it by one.
    single = Query(0, [QueryItem(8, 0, 0)] + list(q.items))
    assert match_count_reference(single, ObjectRecord(0, kws + [(8, 0)])) == c + 1
