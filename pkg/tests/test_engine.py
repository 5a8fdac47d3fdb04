import numpy as np
import pytest

from corpus import make_corpus, oracle, random_dataset, random_query
from matchcount.engine import (BatchRequest, execute_batch, execute_partitioned, merge_topk,
                               plan_tasks)
from matchcount.errors import ConfigurationError, EngineError
from matchcount.index import IndexPartition, build_index, partition_dataset
from matchcount.model import FlatKeywords, ObjectRecord, Query, QueryItem


@pytest.fixture(scope="module")
def corpus():
    return make_corpus(seed=11, datasets=20, queries_per=8, max_n=20_000)


def test_toy_batch(toy_objects, q1):
    r = execute_batch(build_index(toy_objects), BatchRequest([q1]))
    assert r.results[0].entries == [(1, 3)]
    assert r.results[0].threshold == 3


def test_empty_batch(toy_objects):
    r = execute_batch(build_index(toy_objects), BatchRequest([]))
    assert r.results == []


def test_large_batch_against_oracle():
    rng = np.random.default_rng(3)
    flat = FlatKeywords.from_token_matrix(rng.integers(0, 64, (100_000, 8)))
    idx = build_index(flat)
    qs = []
    for i in range(512):
        items = [QueryItem(j, lo, lo + int(rng.integers(0, 4)))
                 for j, lo in enumerate(rng.integers(0, 60, 8).tolist())]
        qs.append(Query(i, items, int(rng.choice([1, 10, 100]))))
    res = execute_batch(idx, BatchRequest(qs))
    assert [r.query_id for r in res.results] == list(range(512))
    for q, r in zip(qs, res.results):
        top, threshold, _ = oracle(q, flat)
        assert r.entries == top and r.threshold == threshold


@pytest.mark.parametrize("selector", ["cpq", "bucket", "sort"])
def test_selectors_agree(corpus, selector):
    for inst in corpus:
        res = execute_batch(inst.index, BatchRequest(inst.queries, selector=selector))
        for q, r in zip(inst.queries, res.results):
            top, threshold, _ = oracle(q, inst.flat)
            assert r.entries == top and r.threshold == threshold


@pytest.mark.parametrize("spans,chunk", [(1, 1), (2, 7), (8, 4096), (1000, 3)])
def test_scheduler_knobs_do_not_change_results(corpus, spans, chunk):
    for inst in corpus[:8]:
        ref = execute_batch(inst.index, BatchRequest(inst.queries))
        got = execute_batch(inst.index, BatchRequest(inst.queries, max_spans_per_task=spans,
                                                     chunk_size=chunk, mode="parallel",
                                                     workers=3, shuffle_seed=5))
        assert [r.entries for r in got.results] == [r.entries for r in ref.results]


def test_task_plan_covers_every_posting(corpus):
    inst = corpus[0]
    tasks = plan_tasks(inst.index, inst.queries, 5, 2)
    for t in tasks:
        assert len(t.starts) <= 2 and np.all(t.ends - t.starts <= 5)
    total = sum(int((t.ends - t.starts).sum()) for t in tasks)
    expect = 0
    for q in inst.queries:
        for item in q.items:
            r0, r1 = inst.index.item_rows(item)
            expect += int((inst.index.span_end[r0:r1] - inst.index.span_start[r0:r1]).sum())
    assert total == expect


def test_timing_and_memory(corpus):
    inst = corpus[3]
    res = execute_batch(inst.index, BatchRequest(inst.queries))
    t = res.timing
    assert all(t[s] >= 0 for s in ("lookup", "match", "select", "merge"))
    assert t["lookup"] + t["match"] + t["select"] + t["merge"] <= t["total"]
    assert res.memory["pool_bytes"] == sum(res.memory["counter_bytes_per_query"])


def test_errors_carry_query_id():
    idx = build_index([ObjectRecord(0, [(0, 1)])])
    # Repeating an item pushes the count past the computed bound only if the
    # bound were wrong, so force it by lying about the index multiplicity.
    idx.dim_multiplicity[0] = 0
    q = Query(42, [QueryItem(0, 1, 1), QueryItem(0, 1, 1)])
    with pytest.raises(EngineError) as info:
        execute_batch(idx, BatchRequest([q]))
    assert info.value.query_id == 42


def test_request_validation():
    with pytest.raises(ConfigurationError):
        BatchRequest([], selector="heap")
    with pytest.raises(ConfigurationError):
        BatchRequest([], mode="gpu")
    with pytest.raises(ConfigurationError):
        BatchRequest([], workers=0)


def test_merge_topk():
    assert merge_topk([[(1, 5)], [(9, 7)]], 1).entries == [(9, 7)]
    with pytest.raises(ConfigurationError):
        merge_topk([[(1, 5)], [(1, 4)]], 2)
    rng = np.random.default_rng(0)
    from matchcount.select import sort_topk
    for _ in range(100):
        counts = rng.integers(0, 6, 60)
        k = int(rng.integers(1, 20))
        bounds = np.sort(rng.choice(np.arange(1, 60), 3, replace=False))
        parts = []
        for a, b in zip(np.r_[0, bounds], np.r_[bounds, 60]):
            parts.append([(int(i) + int(a), int(c)) for i, c in sort_topk(counts[a:b], min(k, b - a))])
        assert merge_topk(parts, k).entries == sort_topk(counts, k)


def test_partitioned_36_objects():
    rng = np.random.default_rng(1)
    flat = random_dataset(rng, 36, 3, 4, 2)
    idx = build_index(flat)
    qs = [random_query(rng, i, 3, 4, 2, int(rng.integers(1, 8))) for i in range(30)]
    ref = execute_batch(idx, BatchRequest(qs))
    for cap in (36, 6, 5, 1):
        got = execute_partitioned(partition_dataset(flat, cap), BatchRequest(qs))
        for a, b in zip(got.results, ref.results):
            assert a.entries == b.entries and a.threshold == b.threshold


def test_partitioned_threshold_4_4_2():
    rng = np.random.default_rng(2)
    flat = random_dataset(rng, 10, 2, 3, 1)
    idx = build_index(flat)
    qs = [Query(i, [QueryItem(0, 0, 5), QueryItem(1, int(rng.integers(0, 3)), 4)], k=3)
          for i in range(10)]
    ref = execute_batch(idx, BatchRequest(qs))
    got = execute_partitioned(partition_dataset(flat, 4), BatchRequest(qs))
    for a, b, cpq in zip(got.results, ref.results, ref.queues):
        assert a.threshold == b.threshold == cpq.audit_threshold - 1


def test_single_partition_identical(corpus):
    inst = corpus[1]
    got = execute_partitioned(partition_dataset(inst.flat, inst.index.num_objects + 5),
                              BatchRequest(inst.queries))
    ref = execute_batch(inst.index, BatchRequest(inst.queries))
    assert [r.to_json() for r in got.results] == [r.to_json() for r in ref.results]


def test_overlapping_partitions_rejected(toy_objects):
    idx = build_index(toy_objects)
    parts = [IndexPartition(0, (0, 3), idx, 0), IndexPartition(1, (2, 5), idx, 2)]
    with pytest.raises(ConfigurationError):
        execute_partitioned(parts, BatchRequest([]))
