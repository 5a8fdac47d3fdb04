"""Top-k selectors that do not use the c-PQ.

``full_scan_counts`` evaluates every object directly; ``sort_topk`` is the
ground-truth ordering; ``bucket_kselect`` is the iterative bucket-partition
selection used as the array-based priority queue competitor.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import FlatKeywords, ObjectRecord, Query, match_count_reference

DEFAULT_BUCKET_NUM = 1024


def full_scan_counts(query: Query, objects: Sequence[ObjectRecord] | FlatKeywords) -> np.ndarray:
    """Match count of ``query`` against every object, by direct evaluation."""
    if isinstance(objects, FlatKeywords):
        counts = np.zeros(objects.num_objects, dtype=np.int64)
        for item in query.items:
            hit = ((objects.dims == item.dim) & (objects.tokens >= item.lo)
                   & (objects.tokens <= item.hi))
            counts += np.bincount(objects.obj_ids[hit], minlength=objects.num_objects)
        return counts
    return np.array([match_count_reference(query, o) for o in objects], dtype=np.int64)


def sort_topk(counts, k: int) -> list[tuple[int, int]]:
    counts = np.asarray(counts)
    if k > len(counts):
        raise ValueError(f"k={k} exceeds array length {len(counts)}")
    order = np.lexsort((np.arange(len(counts)), -counts))[:k]
    return [(int(i), int(counts[i])) for i in order]


def bucket_kselect(counts, k: int, bucket_num: int = DEFAULT_BUCKET_NUM,
                   return_iterations: bool = False):
    """Exact top-k by repeatedly bucketing the survivors.

    Each pass maps a count to ``floor((count - min) / (max - min) * bucket_num)``
    (the maximum lands in the last bucket), keeps every bucket strictly above
    the one holding the k-th largest, and recurses into that boundary bucket.
    A single-valued bucket is finished with the ascending-id tie rule.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if k > len(counts):
        raise ValueError(f"k={k} exceeds array length {len(counts)}")
    if bucket_num < 2:
        raise ValueError("bucket_num must be >= 2")
    ids = np.arange(len(counts))
    vals = counts
    kept_ids: list[np.ndarray] = []
    need = k
    iterations = 0
    while need > 0:
        iterations += 1
        lo, hi = int(vals.min()), int(vals.max())
        if lo == hi:
            kept_ids.append(np.sort(ids)[:need])
            break
        b = (vals - lo) * bucket_num // (hi - lo)
        b = np.minimum(b, bucket_num - 1)
        sizes = np.bincount(b, minlength=bucket_num)[::-1]
        cum = np.cumsum(sizes)
        pos = int(np.searchsorted(cum, need))  # first top-down bucket reaching need
        boundary = bucket_num - 1 - pos
        above = b > boundary
        kept_ids.append(ids[above])
        need -= int(above.sum())
        if need == sizes[pos]:
            kept_ids.append(ids[b == boundary])
            break
        inside = b == boundary
        ids, vals = ids[inside], vals[inside]
    chosen = np.concatenate(kept_ids) if kept_ids else np.empty(0, dtype=np.int64)
    result = sort_topk_subset(counts, chosen)
    return (result, iterations) if return_iterations else result


def sort_topk_subset(counts: np.ndarray, ids: np.ndarray) -> list[tuple[int, int]]:
    order = np.lexsort((ids, -counts[ids]))
    return [(int(ids[i]), int(counts[ids[i]])) for i in order]
