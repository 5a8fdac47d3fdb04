import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matchcount.cpq import (BitmapCounter, CounterPool, CountHashTable, CountPriorityQueue,
                            counter_bytes, counter_width, cpq_extract_topk, cpq_new, cpq_update,
                            ht_capacity, ht_insert)
from matchcount.errors import ContractViolation, CounterOverflowError, TableFullError
from matchcount.index import build_index, lookup
from matchcount.select import sort_topk


def toy_trace(toy_objects, q1):
    idx = build_index(toy_objects)
    cpq = cpq_new(3, 3, 1)
    for item in q1.items:
        for s in lookup(idx, item):
            for oid in idx.list_array[s.start:s.end]:
                cpq_update(cpq, int(oid))
    return cpq


def test_new_state():
    cpq = cpq_new(3, 3, 1)
    assert cpq.audit_threshold == 1
    assert cpq.gate.zipper_array == [0, 0, 0]
    assert cpq.table.population() == 0
    assert cpq_new(10, 3, 2).table.capacity == 16
    empty = cpq_new(0, 1, 5)
    r = cpq_extract_topk(empty)
    assert r.entries == [] and r.threshold == 0


def test_worked_trace(toy_objects, q1):
    cpq = toy_trace(toy_objects, q1)
    assert cpq.audit_threshold == 4
    assert cpq.table.as_dict() == {0: 1, 1: 3}
    np.testing.assert_array_equal(cpq.counts(), [1, 3, 2])
    r = cpq_extract_topk(cpq)
    assert r.entries == [(1, 3)] and r.threshold == 3
    assert r.to_json() == {"query_id": 0, "topk": [{"id": 1, "count": 3}], "threshold": 3}


def test_single_update_k2():
    cpq = cpq_new(5, 3, 2)
    cpq_update(cpq, 4)
    assert cpq.counts()[4] == 1
    assert cpq.table.as_dict() == {4: 1}
    assert cpq.gate.za(1) == 1 and cpq.audit_threshold == 1


def test_second_object_blocked_by_gate():
    cpq = cpq_new(5, 3, 1)
    cpq_update(cpq, 0)
    assert cpq.audit_threshold == 2
    cpq_update(cpq, 1)
    assert cpq.table.as_dict() == {0: 1}


def test_ties_by_ascending_id():
    cpq = cpq_new(5, 3, 2)
    for oid, c in [(4, 1), (3, 2), (2, 3), (1, 3), (0, 3)]:
        for _ in range(c):
            cpq_update(cpq, oid)
    assert cpq.audit_threshold == 4
    # Object 0 reached 3 only after AT had moved past its smaller values, so
    # it never entered the table; the table alone yields the right counts.
    r = cpq.extract()
    assert r.threshold == 3 and r.counts == [3, 3]
    assert cpq.extract(resolve_ties=True).entries == [(0, 3), (1, 3)]


def _ids_with_home(table, home, count, start=0):
    out, i = [], start
    while len(out) < count:
        if table.home(i) == home:
            out.append(i)
        i += 1
    return out


def test_ht_insert_home_slot():
    t = CountHashTable(16)
    ht_insert(t, 5, 3, 1)
    j = t.home(5)
    assert t.ids[j] == 5 and t.vals[j] == 3 and t.ages[j] == 0


def test_robin_hood_displacement():
    t = CountHashTable(16)
    a, b = _ids_with_home(t, 3, 2)
    (c,) = _ids_with_home(t, 4, 1)
    ht_insert(t, a, 1, 1)
    ht_insert(t, c, 1, 1)
    assert t.ids[4] == c and t.ages[4] == 0
    ht_insert(t, b, 1, 1)
    # b reaches slot 4 with age 1 and evicts c (age 0), which moves on.
    assert (t.ids[4], t.ages[4]) == (b, 1)
    assert (t.ids[5], t.ages[5]) == (c, 1)


def test_dead_entry_overwritten():
    t = CountHashTable(16)
    h = t.home(7)
    ht_insert(t, 7, 1, 1)
    (x,) = _ids_with_home(t, h, 1, start=8)
    ht_insert(t, x, 5, 4)
    assert t.ids[h] == x and t.get(7) is None


def test_same_id_keeps_max():
    t = CountHashTable(8)
    ht_insert(t, 2, 3, 1)
    ht_insert(t, 2, 2, 1)
    assert t.as_dict() == {2: 3}
    ht_insert(t, 2, 5, 1)
    assert t.as_dict() == {2: 5}


def test_table_full():
    t = CountHashTable(2)
    ht_insert(t, 0, 1, 1)
    ht_insert(t, 1, 1, 1)
    with pytest.raises(TableFullError):
        ht_insert(t, 2, 1, 1)


def test_counter_overflow_and_bad_id():
    cpq = cpq_new(2, 2, 1)
    cpq_update(cpq, 0)
    cpq_update(cpq, 0)
    with pytest.raises(CounterOverflowError):
        cpq_update(cpq, 0)
    with pytest.raises(ContractViolation):
        cpq_update(cpq, 2)


@pytest.mark.parametrize("max_count,w", [(1, 4), (15, 4), (16, 8), (255, 8), (256, 16),
                                         (65535, 16), (65536, 32)])
def test_counter_width(max_count, w):
    assert counter_width(max_count) == w


def test_bitmap_counter_packing():
    bc = BitmapCounter(7, 15)
    assert bc.w_bits == 4 and bc.nbytes == 4
    assert counter_bytes(1001, 15) == 501 and counter_bytes(1001, 15, packed=False) == 4004
    cpq = CountPriorityQueue(7, 15, 3)
    for i in range(7):
        for _ in range(i * 2 + 1):
            cpq.update(i)
    np.testing.assert_array_equal(cpq.counts(), [1, 3, 5, 7, 9, 11, 13])


def test_counter_pool_slots():
    pool = CounterPool(10, [3, 200, 70000])
    assert pool.sizes == [5, 10, 40]
    assert pool.nbytes == 55
    q = CountPriorityQueue(10, 200, 1, pool.slot(1))
    q.update(9)
    assert pool.buffer[5:15].any() and not pool.buffer[:5].any()


def test_ht_capacity():
    assert ht_capacity(1, 1) == 2
    assert ht_capacity(2, 3) == 16
    assert ht_capacity(100, 64) == 16384


def _stream(rng, n, max_count):
    counts = rng.integers(0, max_count + 1, n)
    return np.repeat(np.arange(n), counts), counts


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 300), st.integers(1, 20), st.integers(1, 12), st.integers(0, 2**32))
def test_exact_and_order_independent(n, max_count, k, seed):
    rng = np.random.default_rng(seed)
    stream, counts = _stream(rng, n, max_count)
    expect = [c for _, c in sort_topk(counts, min(k, n)) if c > 0]
    results = []
    for perm in range(3):
        cpq = CountPriorityQueue(n, max_count, k)
        for oid in rng.permutation(stream):
            cpq.update(int(oid))
        r = cpq.extract(resolve_ties=True)
        assert r.counts == expect
        assert r.threshold == (expect[-1] if len(expect) == k else 0)
        assert cpq.invariants_hold()
        assert cpq.table.population() <= k * cpq.audit_threshold
        assert all(c >= r.threshold for c in r.counts)
        results.append(r.entries)
    assert results[0] == results[1] == results[2]
    assert results[0] == [e for e in sort_topk(counts, min(k, n)) if e[1] > 0]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 200), st.integers(1, 10), st.integers(1, 8), st.integers(0, 2**32),
       st.integers(1, 3))
def test_stale_at_reads_never_wrong(n, max_count, k, seed, lag):
    """A lagging AT read only adds inserts: exact answer or a table-full error."""
    rng = np.random.default_rng(seed)
    stream, counts = _stream(rng, n, max_count)
    cpq = CountPriorityQueue(n, max_count, k)
    try:
        for oid in rng.permutation(stream):
            at = cpq.audit_threshold
            cpq.update(int(oid), observed_at=int(rng.integers(max(1, at - lag), at + 1)))
    except TableFullError:
        return
    expect = [e for e in sort_topk(counts, min(k, n)) if e[1] > 0]
    assert cpq.extract(resolve_ties=True).entries == expect
    assert cpq.extract().counts == [c for _, c in expect]


def test_stale_reads_can_exhaust_table():
    # k=1, max_count=1: after the first update AT=2, but readers still
    # seeing AT=1 keep inserting until the 2-slot table is full.
    cpq = CountPriorityQueue(3, 1, 1)
    cpq.update(0)
    cpq.update(1, observed_at=1)
    with pytest.raises(TableFullError):
        cpq.update(2, observed_at=1)


def test_observed_at_must_not_be_future():
    cpq = cpq_new(3, 3, 1)
    with pytest.raises(ContractViolation):
        cpq.update(0, observed_at=2)


def test_hash_table_only_extraction_counts():
    """Without tie resolution the count multiset is still exact."""
    rng = np.random.default_rng(7)
    for _ in range(200):
        n, mc, k = int(rng.integers(1, 500)), int(rng.integers(1, 30)), int(rng.integers(1, 20))
        stream, counts = _stream(rng, n, mc)
        cpq = CountPriorityQueue(n, mc, k)
        cpq.scan(stream, np.array([0]), np.array([len(stream)]))
        expect = [c for _, c in sort_topk(counts, min(k, n)) if c > 0]
        assert cpq.extract().counts == expect
