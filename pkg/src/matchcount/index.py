"""Inverted index over packed ``(dim, token)`` keywords.

All postings live in one flat ``list_array``. The position map is kept in
CSR form: ``keys`` holds the sorted packed keywords, and keyword ``i`` owns
span rows ``span_ptr[i]:span_ptr[i+1]`` of ``span_start``/``span_end``.
Because keys are sorted and their postings are laid out in key order, a
range item ``(dim, [lo, hi])`` always resolves to one contiguous run of span
rows, which the engine exploits.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import BuildError
from .model import FlatKeywords, Keyword, ObjectRecord, Query, QueryItem

DEFAULT_SPLIT_THRESHOLD = 4096
MAGIC = b"MCIX"
VERSION = 1


class PostingsSpan(NamedTuple):
    start: int
    end: int

    def __len__(self):
        return self.end - self.start


def _pack(dims, tokens) -> np.ndarray:
    return (np.asarray(dims, dtype=np.uint64) << np.uint64(32)) | np.asarray(tokens, dtype=np.uint64)


@dataclass
class InvertedIndex:
    list_array: np.ndarray
    keys: np.ndarray
    span_ptr: np.ndarray
    span_start: np.ndarray
    span_end: np.ndarray
    num_objects: int
    dim_multiplicity: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def num_keywords(self) -> int:
        return len(self.keys)

    @property
    def num_spans(self) -> int:
        return len(self.span_start)

    @property
    def max_token_per_dim(self) -> dict[int, int]:
        dims = (self.keys >> np.uint64(32)).astype(np.int64)
        toks = (self.keys & np.uint64(0xFFFFFFFF)).astype(np.int64)
        out: dict[int, int] = {}
        for d, t in zip(dims.tolist(), toks.tolist()):
            out[d] = t  # keys are sorted, so the last token per dim wins
        return out

    def keyword_at(self, i: int) -> Keyword:
        key = int(self.keys[i])
        return Keyword(key >> 32, key & 0xFFFFFFFF)

    def keywords(self) -> Iterator[Keyword]:
        for i in range(self.num_keywords):
            yield self.keyword_at(i)

    def spans_of(self, kw: Keyword) -> list[PostingsSpan]:
        i = int(np.searchsorted(self.keys, np.uint64(kw.packed())))
        if i == self.num_keywords or int(self.keys[i]) != kw.packed():
            return []
        return self._spans(self.span_ptr[i], self.span_ptr[i + 1])

    def _spans(self, r0, r1) -> list[PostingsSpan]:
        return [PostingsSpan(int(s), int(e)) for s, e in
                zip(self.span_start[r0:r1], self.span_end[r0:r1])]

    @property
    def position_map(self) -> dict[Keyword, list[PostingsSpan]]:
        return {
            self.keyword_at(i): self._spans(self.span_ptr[i], self.span_ptr[i + 1])
            for i in range(self.num_keywords)
        }

    def postings(self, kw: Keyword) -> np.ndarray:
        spans = self.spans_of(kw)
        if not spans:
            return np.empty(0, dtype=self.list_array.dtype)
        return np.concatenate([self.list_array[s.start:s.end] for s in spans])

    def item_rows(self, item: QueryItem) -> tuple[int, int]:
        """Span-row range ``[r0, r1)`` covering every keyword matched by ``item``."""
        lo = np.uint64((item.dim << 32) | item.lo)
        hi = np.uint64((item.dim << 32) | item.hi)
        i0 = int(np.searchsorted(self.keys, lo, side="left"))
        i1 = int(np.searchsorted(self.keys, hi, side="right"))
        return int(self.span_ptr[i0]), int(self.span_ptr[i1])

    def max_count(self, query: Query) -> int:
        """Upper bound on the match count any object can reach for ``query``.

        Each item contributes at most ``min(#keywords present in its range,
        max keywords one object holds in that dim)``.
        """
        total = 0
        for item in query.items:
            lo = np.uint64((item.dim << 32) | item.lo)
            hi = np.uint64((item.dim << 32) | item.hi)
            present = int(np.searchsorted(self.keys, hi, side="right")
                          - np.searchsorted(self.keys, lo, side="left"))
            total += min(present, self.dim_multiplicity.get(item.dim, 0))
        return total

    def to_flat(self) -> FlatKeywords:
        """Recover the (object, keyword) rows the index was built from."""
        lens = self.span_end - self.span_start
        span_key = np.repeat(self.keys, np.diff(self.span_ptr))
        keys = np.repeat(span_key, lens)
        ids = np.concatenate([self.list_array[s:e] for s, e in zip(self.span_start, self.span_end)]) \
            if self.num_spans else np.zeros(0, dtype=np.int64)
        return FlatKeywords(ids, (keys >> np.uint64(32)).astype(np.int64),
                            (keys & np.uint64(0xFFFFFFFF)).astype(np.int64), self.num_objects)

    def nbytes(self) -> int:
        return sum(a.nbytes for a in (self.list_array, self.keys, self.span_ptr,
                                      self.span_start, self.span_end))

    def longest_list(self) -> int:
        if not self.num_keywords:
            return 0
        starts = self.span_start[self.span_ptr[:-1]]
        ends = self.span_end[self.span_ptr[1:] - 1]
        return int((ends - starts).max())

    def save(self, path_or_file) -> None:
        if hasattr(path_or_file, "write"):
            _write_index(self, path_or_file)
        else:
            with open(path_or_file, "wb") as f:
                _write_index(self, f)

    @classmethod
    def load(cls, path_or_file) -> "InvertedIndex":
        if hasattr(path_or_file, "read"):
            return _read_index(path_or_file.read())
        with open(path_or_file, "rb") as f:
            return _read_index(f.read())


def lookup(index: InvertedIndex, item: QueryItem) -> list[PostingsSpan]:
    """Spans of every present keyword ``(item.dim, t)`` with ``lo <= t <= hi``."""
    r0, r1 = index.item_rows(item)
    return index._spans(r0, r1)


def _dim_multiplicity(obj_ids: np.ndarray, dims: np.ndarray) -> dict[int, int]:
    if not len(obj_ids):
        return {}
    pair = obj_ids.astype(np.int64) * (1 << 16) + dims.astype(np.int64)
    uniq, counts = np.unique(pair, return_counts=True)
    udims = uniq & 0xFFFF
    out = np.zeros(int(udims.max()) + 1, dtype=np.int64)
    np.maximum.at(out, udims, counts)
    return {int(d): int(c) for d, c in enumerate(out) if c}


def _assemble(list_array, keys, key_bounds, num_objects, split_threshold,
              multiplicity, meta) -> InvertedIndex:
    lengths = np.diff(key_bounds)
    if split_threshold is None:
        per_key = np.ones(len(keys), dtype=np.int64)
    else:
        per_key = np.maximum(1, -(-lengths // split_threshold))
    span_ptr = np.zeros(len(keys) + 1, dtype=np.int64)
    np.cumsum(per_key, out=span_ptr[1:])
    owner = np.repeat(np.arange(len(keys)), per_key)
    within = np.arange(int(span_ptr[-1])) - span_ptr[owner]
    if split_threshold is None:
        span_start = key_bounds[:-1].copy()
        span_end = key_bounds[1:].copy()
    else:
        span_start = key_bounds[owner] + within * split_threshold
        span_end = np.minimum(span_start + split_threshold, key_bounds[owner + 1])
    return InvertedIndex(list_array, keys, span_ptr, span_start.astype(np.int64),
                         span_end.astype(np.int64), int(num_objects), multiplicity, meta)


def build_index(objects: Sequence[ObjectRecord] | FlatKeywords,
                split_threshold: int | None = None,
                num_objects: int | None = None) -> InvertedIndex:
    """Build the index; ``split_threshold`` caps every (sub-)list length."""
    if split_threshold is not None and split_threshold < 1:
        raise BuildError("split_threshold must be positive")
    if isinstance(objects, FlatKeywords):
        flat = objects
    else:
        ids = [o.id for o in objects]
        if len(set(ids)) != len(ids):
            raise BuildError("duplicate object id")
        if ids and sorted(ids) != list(range(len(ids))):
            raise BuildError("object ids must be dense 0..n-1")
        flat = FlatKeywords.from_records(objects)
    n = flat.num_objects if num_objects is None else num_objects
    packed = _pack(flat.dims, flat.tokens)
    order = np.lexsort((flat.obj_ids, packed))
    packed_sorted = packed[order]
    list_array = flat.obj_ids[order].astype(np.int64)
    if len(packed_sorted) > 1:
        same = (packed_sorted[1:] == packed_sorted[:-1]) & (list_array[1:] == list_array[:-1])
        if same.any():
            raise BuildError("an object holds the same keyword twice")
    keys, first = np.unique(packed_sorted, return_index=True)
    key_bounds = np.append(first, len(packed_sorted)).astype(np.int64)
    meta = {"split_threshold": split_threshold}
    return _assemble(list_array, keys.astype(np.uint64), key_bounds, n, split_threshold,
                     _dim_multiplicity(flat.obj_ids, flat.dims), meta)


@dataclass
class IndexPartition:
    part_id: int
    object_id_range: tuple[int, int]
    index: InvertedIndex
    id_offset: int


def partition_dataset(objects: Sequence[ObjectRecord] | FlatKeywords, part_capacity: int,
                      split_threshold: int | None = None) -> list[IndexPartition]:
    """Split objects into consecutive id ranges of ``part_capacity`` and index each."""
    if part_capacity < 1:
        raise BuildError("part_capacity must be >= 1")
    flat = objects if isinstance(objects, FlatKeywords) else FlatKeywords.from_records(objects)
    n = flat.num_objects
    parts = []
    for p, start in enumerate(range(0, max(n, 1), part_capacity)):
        stop = min(start + part_capacity, n)
        mask = (flat.obj_ids >= start) & (flat.obj_ids < stop)
        local = FlatKeywords(flat.obj_ids[mask] - start, flat.dims[mask], flat.tokens[mask],
                             stop - start)
        parts.append(IndexPartition(p, (start, stop), build_index(local, split_threshold), start))
    return parts


_HEAD = struct.Struct("<4sIII")
_REC = struct.Struct("<HIH")


def _write_index(index: InvertedIndex, f: BinaryIO) -> None:
    if index.num_objects > 0xFFFFFFFF or index.num_keywords > 0xFFFFFFFF:
        raise BuildError("index too large for the u32 header fields")
    f.write(_HEAD.pack(MAGIC, VERSION, index.num_objects, index.num_keywords))
    chunks = []
    dims = (index.keys >> np.uint64(32)).tolist()
    toks = (index.keys & np.uint64(0xFFFFFFFF)).tolist()
    ptr = index.span_ptr.tolist()
    for i in range(index.num_keywords):
        r0, r1 = ptr[i], ptr[i + 1]
        if r1 - r0 > 0xFFFF:
            raise BuildError("too many sub-lists for one keyword")
        chunks.append(_REC.pack(dims[i], toks[i], r1 - r0))
        spans = np.empty((r1 - r0, 2), dtype="<u8")
        spans[:, 0] = index.span_start[r0:r1]
        spans[:, 1] = index.span_end[r0:r1]
        chunks.append(spans.tobytes())
    f.write(b"".join(chunks))
    f.write(index.list_array.astype("<u4").tobytes())


def _read_index(buf: bytes) -> InvertedIndex:
    if len(buf) < _HEAD.size:
        raise BuildError("truncated index header")
    magic, version, num_objects, num_keywords = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BuildError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BuildError(f"unsupported index version {version}")
    pos = _HEAD.size
    keys = np.empty(num_keywords, dtype=np.uint64)
    span_ptr = np.zeros(num_keywords + 1, dtype=np.int64)
    starts, ends = [], []
    for i in range(num_keywords):
        if pos + _REC.size > len(buf):
            raise BuildError("truncated position map")
        d, t, cnt = _REC.unpack_from(buf, pos)
        pos += _REC.size
        if cnt == 0:
            raise BuildError("keyword with no spans")
        raw = np.frombuffer(buf, dtype="<u8", count=2 * cnt, offset=pos).reshape(cnt, 2)
        pos += 16 * cnt
        starts.append(raw[:, 0])
        ends.append(raw[:, 1])
        keys[i] = (d << 32) | t
        span_ptr[i + 1] = span_ptr[i] + cnt
    span_start = np.concatenate(starts).astype(np.int64) if starts else np.empty(0, np.int64)
    span_end = np.concatenate(ends).astype(np.int64) if ends else np.empty(0, np.int64)
    rest = len(buf) - pos
    if rest % 4:
        raise BuildError("list array length is not a multiple of 4 bytes")
    list_array = np.frombuffer(buf, dtype="<u4", offset=pos).astype(np.int64)
    index = InvertedIndex(list_array, keys, span_ptr, span_start, span_end, num_objects, {},
                          {"split_threshold": None})
    validate_index(index)
    owners = np.repeat(np.arange(num_keywords), np.diff(span_ptr))
    lens = span_end - span_start
    kw_of_posting = np.repeat(owners, lens)
    index.dim_multiplicity = _dim_multiplicity(list_array, (keys[kw_of_posting] >> np.uint64(32)).astype(np.int64))
    return index


def validate_index(index: InvertedIndex) -> None:
    """Raise :class:`BuildError` unless every structural invariant holds."""
    keys, s, e, ptr = index.keys, index.span_start, index.span_end, index.span_ptr
    if len(ptr) != len(keys) + 1 or ptr[0] != 0 or np.any(np.diff(ptr) < 1):
        raise BuildError("malformed span pointer array")
    if len(keys) > 1 and np.any(keys[1:] <= keys[:-1]):
        raise BuildError("keywords not strictly increasing")
    if np.any(s > e):
        raise BuildError("span with start > end")
    if len(s):
        order = np.argsort(s, kind="stable")
        if np.any(s[order][1:] < e[order][:-1]):
            raise BuildError("overlapping spans")
        if e.max() > len(index.list_array) or s.min() < 0:
            raise BuildError("span outside list array")
    if int((e - s).sum()) != len(index.list_array):
        raise BuildError("span lengths do not cover the list array")
    la = index.list_array
    if len(la) and (la.min() < 0 or la.max() >= index.num_objects):
        raise BuildError("object id outside [0, num_objects)")
    for i in range(len(keys)):
        ids = np.concatenate([la[a:b] for a, b in zip(s[ptr[i]:ptr[i + 1]], e[ptr[i]:ptr[i + 1]])])
        if len(ids) > 1 and np.any(ids[1:] <= ids[:-1]):
            raise BuildError(f"postings of keyword #{i} not strictly ascending")
