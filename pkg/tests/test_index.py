import io

import numpy as np
import pytest

from matchcount.errors import BuildError, ConstructionError
from matchcount.index import (DEFAULT_SPLIT_THRESHOLD, InvertedIndex, PostingsSpan, build_index,
                              lookup, partition_dataset, validate_index)
from matchcount.model import FlatKeywords, Keyword, ObjectRecord, QueryItem


def test_toy_postings(toy_objects):
    idx = build_index(toy_objects)
    assert idx.num_keywords == 6
    np.testing.assert_array_equal(idx.postings(Keyword(0, 1)), [0, 2])
    np.testing.assert_array_equal(idx.postings(Keyword(1, 2)), [0, 2])
    np.testing.assert_array_equal(idx.postings(Keyword(2, 2)), [1, 2])
    assert idx.max_token_per_dim == {0: 2, 1: 2, 2: 2}


def test_lookup(toy_objects):
    idx = build_index(toy_objects)
    spans = lookup(idx, QueryItem(0, 1, 2))
    assert spans == idx.spans_of(Keyword(0, 1)) + idx.spans_of(Keyword(0, 2))
    assert lookup(idx, QueryItem(7, 0, 100)) == []
    full = lookup(idx, QueryItem(1, 0, (1 << 32) - 1))
    assert sum(len(s) for s in full) == 3


def test_empty_dataset():
    idx = build_index([])
    assert idx.num_keywords == 0 and len(idx.list_array) == 0
    assert idx.position_map == {}


def test_split_threshold():
    flat = FlatKeywords(np.arange(10_000), np.zeros(10_000), np.zeros(10_000), 10_000)
    idx = build_index(flat, split_threshold=DEFAULT_SPLIT_THRESHOLD)
    spans = idx.spans_of(Keyword(0, 0))
    assert [len(s) for s in spans] == [4096, 4096, 1808]
    np.testing.assert_array_equal(idx.postings(Keyword(0, 0)), np.arange(10_000))
    assert build_index(flat).spans_of(Keyword(0, 0)) == [PostingsSpan(0, 10_000)]


def test_duplicate_ids_rejected():
    with pytest.raises((BuildError, ConstructionError)):
        build_index([ObjectRecord(0, [(0, 1)]), ObjectRecord(0, [(0, 2)])])


def test_partition_sizes():
    objs = [ObjectRecord(i, [(0, i % 3)]) for i in range(10)]
    parts = partition_dataset(objs, 4)
    assert [p.index.num_objects for p in parts] == [4, 4, 2]
    assert [p.id_offset for p in parts] == [0, 4, 8]
    assert [p.object_id_range for p in parts] == [(0, 4), (4, 8), (8, 10)]
    assert len(partition_dataset([ObjectRecord(i, [(0, 0)]) for i in range(36)], 6)) == 6
    one = partition_dataset(objs, 100)
    assert len(one) == 1
    np.testing.assert_array_equal(one[0].index.list_array, build_index(objs).list_array)


def _random_flat(rng, n=500, dims=4, domain=30):
    toks = rng.integers(0, domain, (n, dims))
    return FlatKeywords.from_token_matrix(toks)


def test_roundtrip_every_keyword():
    rng = np.random.default_rng(1)
    flat = _random_flat(rng)
    idx = build_index(flat, split_threshold=7)
    assert sum(len(s) for spans in idx.position_map.values() for s in spans) == len(flat)
    for o in flat.records()[:50]:
        for kw in o.keywords:
            hits = [s for s in lookup(idx, QueryItem.point(kw.dim, kw.token))
                    if o.id in idx.list_array[s.start:s.end]]
            assert len(hits) == 1
    assert max(len(s) for spans in idx.position_map.values() for s in spans) <= 7


def test_split_preserves_postings():
    rng = np.random.default_rng(2)
    flat = _random_flat(rng, n=2000, domain=5)
    a, b = build_index(flat), build_index(flat, split_threshold=13)
    for kw in a.keywords():
        np.testing.assert_array_equal(a.postings(kw), b.postings(kw))


def test_serialization_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    idx = build_index(_random_flat(rng), split_threshold=16)
    path = tmp_path / "x.mcix"
    idx.save(path)
    raw = path.read_bytes()
    assert raw[:4] == b"MCIX"
    back = InvertedIndex.load(path)
    for name in ("list_array", "keys", "span_ptr", "span_start", "span_end"):
        np.testing.assert_array_equal(getattr(back, name), getattr(idx, name))
    buf = io.BytesIO()
    back.save(buf)
    assert buf.getvalue() == raw
    validate_index(back)


def test_load_rejects_corruption(tmp_path):
    idx = build_index([ObjectRecord(0, [(0, 1)]), ObjectRecord(1, [(0, 1)])])
    buf = io.BytesIO()
    idx.save(buf)
    raw = bytearray(buf.getvalue())
    with pytest.raises(BuildError):
        InvertedIndex.load(io.BytesIO(b"XXXX" + bytes(raw[4:])))
    # Swap the two postings so the span is no longer sorted.
    raw[-8:] = (1).to_bytes(4, "little") + (0).to_bytes(4, "little")
    with pytest.raises(BuildError):
        InvertedIndex.load(io.BytesIO(bytes(raw)))


def test_to_flat_recovers_rows(toy_objects):
    idx = build_index(toy_objects, split_threshold=1)
    assert idx.to_flat().records() == toy_objects
