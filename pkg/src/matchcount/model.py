"""Keywords, objects and queries of the match-count model.

An object is a set of ``(dim, token)`` keywords. A query is a list of range
items ``(dim, [lo, hi])``; the match count of a query against an object is
the number of (item, keyword) pairs where the keyword falls in the item's
range. :func:`match_count_reference` evaluates that sum directly and is the
oracle the index, the c-PQ and the engine are all checked against.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConstructionError, DomainError, InvalidRangeError

MAX_DIM = (1 << 16) - 1
MAX_TOKEN = (1 << 32) - 1


@dataclass(frozen=True, order=True, slots=True)
class Keyword:
    dim: int
    token: int

    def __post_init__(self):
        if not 0 <= self.dim <= MAX_DIM:
            raise DomainError(f"dim {self.dim} outside [0, {MAX_DIM}]")
        if not 0 <= self.token <= MAX_TOKEN:
            raise DomainError(f"token {self.token} outside [0, {MAX_TOKEN}]")

    def packed(self) -> int:
        """64-bit key used by the index: dim in the high half, token low."""
        return (self.dim << 32) | self.token


@dataclass(frozen=True)
class ObjectRecord:
    id: int
    keywords: tuple[Keyword, ...]

    def __init__(self, id: int, keywords: Iterable[Keyword | tuple[int, int]]):
        if id < 0:
            raise ConstructionError(f"object id must be non-negative, got {id}")
        kws = sorted(k if isinstance(k, Keyword) else Keyword(*k) for k in keywords)
        for a, b in zip(kws, kws[1:]):
            if a == b:
                raise ConstructionError(f"object {id}: duplicate keyword {a}")
        object.__setattr__(self, "id", int(id))
        object.__setattr__(self, "keywords", tuple(kws))

    def __len__(self):
        return len(self.keywords)


@dataclass(frozen=True, slots=True)
class QueryItem:
    dim: int
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise InvalidRangeError(f"item on dim {self.dim}: lo {self.lo} > hi {self.hi}")
        if not 0 <= self.dim <= MAX_DIM:
            raise DomainError(f"dim {self.dim} outside [0, {MAX_DIM}]")
        if self.lo < 0 or self.hi > MAX_TOKEN:
            raise DomainError(f"range [{self.lo}, {self.hi}] outside token domain")

    @classmethod
    def point(cls, dim: int, token: int) -> "QueryItem":
        return cls(dim, token, token)

    def contains(self, kw: Keyword) -> bool:
        return kw.dim == self.dim and self.lo <= kw.token <= self.hi


@dataclass(frozen=True)
class Query:
    id: int
    items: tuple[QueryItem, ...]
    k: int = 1

    def __init__(self, id: int, items: Iterable[QueryItem], k: int = 1):
        items = tuple(items)
        if not items:
            raise ConstructionError(f"query {id} has no items")
        if k < 1:
            raise ConstructionError(f"query {id}: k must be >= 1, got {k}")
        object.__setattr__(self, "id", int(id))
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "k", int(k))


def match_count_reference(query: Query, obj: ObjectRecord) -> int:
    """Direct evaluation of the match count, one item at a time."""
    return sum(1 for r in query.items for o in obj.keywords if r.contains(o))


@dataclass
class FlatKeywords:
    """Column layout of a dataset: one row per (object, keyword) pair.

    Adapters that produce millions of keywords build this directly instead of
    going through :class:`ObjectRecord`.
    """

    obj_ids: np.ndarray
    dims: np.ndarray
    tokens: np.ndarray
    num_objects: int

    def __post_init__(self):
        self.obj_ids = np.asarray(self.obj_ids, dtype=np.int64)
        self.dims = np.asarray(self.dims, dtype=np.int64)
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if not (len(self.obj_ids) == len(self.dims) == len(self.tokens)):
            raise ConstructionError("column lengths differ")
        if len(self.dims) and (self.dims.min() < 0 or self.dims.max() > MAX_DIM):
            raise DomainError("dim outside 16-bit domain")
        if len(self.tokens) and (self.tokens.min() < 0 or self.tokens.max() > MAX_TOKEN):
            raise DomainError("token outside 32-bit domain")
        if len(self.obj_ids) and (self.obj_ids.min() < 0 or self.obj_ids.max() >= self.num_objects):
            raise ConstructionError("object id outside [0, num_objects)")

    def __len__(self):
        return len(self.obj_ids)

    @classmethod
    def from_records(cls, records: Sequence[ObjectRecord]) -> "FlatKeywords":
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise ConstructionError("duplicate object id")
        n = max(ids) + 1 if ids else 0
        total = sum(len(r) for r in records)
        obj = np.empty(total, dtype=np.int64)
        dims = np.empty(total, dtype=np.int64)
        toks = np.empty(total, dtype=np.int64)
        pos = 0
        for r in records:
            for kw in r.keywords:
                obj[pos], dims[pos], toks[pos] = r.id, kw.dim, kw.token
                pos += 1
        return cls(obj, dims, toks, n)

    @classmethod
    def from_token_matrix(cls, tokens: np.ndarray) -> "FlatKeywords":
        """One keyword per column: row i becomes {(j, tokens[i, j])}."""
        tokens = np.asarray(tokens, dtype=np.int64)
        n, d = tokens.shape
        return cls(np.repeat(np.arange(n), d), np.tile(np.arange(d), n), tokens.ravel(), n)

    def record(self, i: int) -> ObjectRecord:
        mask = self.obj_ids == i
        return ObjectRecord(i, zip(self.dims[mask].tolist(), self.tokens[mask].tolist()))

    def records(self) -> list[ObjectRecord]:
        order = np.argsort(self.obj_ids, kind="stable")
        bounds = np.searchsorted(self.obj_ids[order], np.arange(self.num_objects + 1))
        dims, toks = self.dims[order].tolist(), self.tokens[order].tolist()
        return [
            ObjectRecord(i, zip(dims[bounds[i]:bounds[i + 1]], toks[bounds[i]:bounds[i + 1]]))
            for i in range(self.num_objects)
        ]


@dataclass(frozen=True)
class Schema:
    """Relational schema: per-attribute names and finite token domains."""

    domain_sizes: tuple[int, ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.domain_sizes:
            raise ConstructionError("schema has no attributes")
        if any(s < 1 for s in self.domain_sizes):
            raise ConstructionError("domain sizes must be positive")
        if len(self.domain_sizes) > MAX_DIM + 1:
            raise ConstructionError("too many attributes for a 16-bit dim")
        if self.names and len(self.names) != len(self.domain_sizes):
            raise ConstructionError("names and domain sizes differ in length")

    def __len__(self):
        return len(self.domain_sizes)

    def attribute_index(self, attr: int | str) -> int:
        if isinstance(attr, str):
            try:
                return self.names.index(attr)
            except ValueError:
                raise ConstructionError(f"unknown attribute {attr!r}") from None
        if not 0 <= attr < len(self):
            raise ConstructionError(f"attribute index {attr} outside schema")
        return attr


def encode_relational_tuple(values: Sequence[int], schema: Schema, id: int = 0) -> ObjectRecord:
    """Tuple ``(v_0, ..., v_{l-1})`` -> object ``{(0, v_0), ..., (l-1, v_{l-1})}``."""
    if len(values) != len(schema):
        raise ConstructionError(f"expected {len(schema)} values, got {len(values)}")
    for j, (v, size) in enumerate(zip(values, schema.domain_sizes)):
        if not 0 <= v < size:
            raise DomainError(f"attribute {j}: token {v} outside [0, {size})")
    return ObjectRecord(id, [Keyword(j, int(v)) for j, v in enumerate(values)])


def encode_relational_query(ranges: Iterable[tuple[int | str, int, int]], k: int,
                            schema: Schema, id: int = 0) -> Query:
    """Build a range query, clamping each range into its attribute's domain."""
    items = []
    for attr, lo, hi in ranges:
        j = schema.attribute_index(attr)
        top = schema.domain_sizes[j] - 1
        lo, hi = max(int(lo), 0), min(int(hi), top)
        if lo > hi:
            raise InvalidRangeError(f"attribute {attr}: empty range after clamping")
        items.append(QueryItem(j, lo, hi))
    return Query(id, items, k)


def window_range(attr: int | str, value: int, half_width: int = 50) -> tuple[int | str, int, int]:
    """``[value - half_width, value + half_width]``; clamping happens on encode."""
    return (attr, value - half_width, value + half_width)


def equal_width_bins(values: np.ndarray, bins: int = 1024, lo: float | None = None,
                     hi: float | None = None) -> np.ndarray:
    """Discretize a numeric column into ``bins`` intervals of equal width."""
    values = np.asarray(values, dtype=np.float64)
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.int64)
    out = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(out, 0, bins - 1)
