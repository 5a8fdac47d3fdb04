"""Batch query execution over an inverted index.

Work is cut into tasks of ``(query, item, span chunk)``: every postings span
an item touches is chopped into pieces of at most ``chunk_size`` ids, and up
to ``max_spans_per_task`` pieces form one task. Each query owns one c-PQ; in
parallel mode tasks run on a thread pool in a shuffled order and take the
query's lock around the (GIL-free) scan kernel, so updates to one c-PQ are
serialised while different queries proceed concurrently.
"""
from __future__ import annotations

import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cpq import CounterPool, CountPriorityQueue, TopKResult, rank
from .errors import ConfigurationError, ContractViolation, EngineError
from .index import DEFAULT_SPLIT_THRESHOLD, IndexPartition, InvertedIndex
from .model import Query
from .select import DEFAULT_BUCKET_NUM, bucket_kselect, sort_topk

SELECTORS = ("cpq", "bucket", "sort")
MODES = ("sequential", "parallel")
STAGES = ("lookup", "match", "select", "merge")


@dataclass
class BatchRequest:
    queries: list[Query]
    selector: str = "cpq"
    mode: str = "sequential"
    workers: int = 4
    max_spans_per_task: int = 2
    chunk_size: int = DEFAULT_SPLIT_THRESHOLD
    resolve_ties: bool = True
    shuffle_seed: int | None = None
    bucket_num: int = DEFAULT_BUCKET_NUM

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ConfigurationError(f"selector must be one of {SELECTORS}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.workers < 1 or self.max_spans_per_task < 1 or self.chunk_size < 1:
            raise ConfigurationError("workers, max_spans_per_task and chunk_size must be >= 1")


@dataclass
class BatchResult:
    results: list[TopKResult]
    timing: dict = field(default_factory=lambda: dict.fromkeys(STAGES + ("total",), 0))
    memory: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.results)

    def __getitem__(self, i):
        return self.results[i]


@dataclass
class _Task:
    query_pos: int
    starts: np.ndarray
    ends: np.ndarray


def plan_tasks(index: InvertedIndex, queries: list[Query], chunk_size: int,
               max_spans_per_task: int) -> list[_Task]:
    """Deterministic task list: query order, then item order, then span order."""
    tasks = []
    for qpos, q in enumerate(queries):
        for item in q.items:
            r0, r1 = index.item_rows(item)
            if r0 == r1:
                continue
            s = index.span_start[r0:r1]
            e = index.span_end[r0:r1]
            pieces = np.maximum(1, -(-(e - s) // chunk_size))
            owner = np.repeat(np.arange(len(s)), pieces)
            offs = np.arange(len(owner)) - np.repeat(np.cumsum(pieces) - pieces, pieces)
            ps = s[owner] + offs * chunk_size
            pe = np.minimum(ps + chunk_size, e[owner])
            for j in range(0, len(ps), max_spans_per_task):
                tasks.append(_Task(qpos, ps[j:j + max_spans_per_task], pe[j:j + max_spans_per_task]))
    return tasks


def _select_from_counts(counts: np.ndarray, q: Query, selector: str, bucket_num: int) -> TopKResult:
    k = min(q.k, len(counts))
    if k == 0:
        return TopKResult(q.id, [], 0)
    if selector == "sort":
        top = sort_topk(counts, k)
    else:
        top = bucket_kselect(counts, k, bucket_num)
    entries = [e for e in top if e[1] > 0]
    threshold = entries[-1][1] if len(entries) == q.k else 0
    return TopKResult(q.id, entries, threshold)


def execute_batch(index: InvertedIndex, request: BatchRequest) -> BatchResult:
    t0 = time.perf_counter_ns()
    queries = request.queries
    timing = dict.fromkeys(STAGES, 0)
    if not queries:
        timing["total"] = time.perf_counter_ns() - t0
        return BatchResult([], timing, {"counter_bytes_per_query": [], "pool_bytes": 0})

    tl = time.perf_counter_ns()
    tasks = plan_tasks(index, queries, request.chunk_size, request.max_spans_per_task)
    max_counts = [max(1, index.max_count(q)) for q in queries]
    timing["lookup"] = time.perf_counter_ns() - tl

    if request.selector != "cpq":
        tm = time.perf_counter_ns()
        counts = [np.zeros(index.num_objects, dtype=np.int64) for _ in queries]
        for t in tasks:
            ids = np.concatenate([index.list_array[a:b] for a, b in zip(t.starts, t.ends)])
            counts[t.query_pos] += np.bincount(ids, minlength=index.num_objects)
        timing["match"] = time.perf_counter_ns() - tm
        ts = time.perf_counter_ns()
        results = [_select_from_counts(c, q, request.selector, request.bucket_num)
                   for c, q in zip(counts, queries)]
        timing["select"] = time.perf_counter_ns() - ts
        timing["total"] = time.perf_counter_ns() - t0
        return BatchResult(results, timing, {
            "counter_bytes_per_query": [8 * index.num_objects] * len(queries),
            "pool_bytes": 8 * index.num_objects * len(queries)})

    tm = time.perf_counter_ns()
    pool = CounterPool(index.num_objects, max_counts)
    queues = [CountPriorityQueue(index.num_objects, mc, q.k, pool.slot(i), q.id)
              for i, (q, mc) in enumerate(zip(queries, max_counts))]
    la = index.list_array

    def run(task: _Task):
        cpq = queues[task.query_pos]
        try:
            with cpq.lock:
                cpq.scan(la, task.starts, task.ends)
        except ContractViolation as exc:
            raise EngineError(cpq.query_id, exc) from exc

    if request.mode == "sequential":
        for t in tasks:
            run(t)
    else:
        order = list(tasks)
        random.Random(request.shuffle_seed).shuffle(order)
        with ThreadPoolExecutor(max_workers=request.workers) as ex:
            for fut in [ex.submit(run, t) for t in order]:
                fut.result()
    timing["match"] = time.perf_counter_ns() - tm

    ts = time.perf_counter_ns()
    results = [cpq.extract(resolve_ties=request.resolve_ties) for cpq in queues]
    timing["select"] = time.perf_counter_ns() - ts
    timing["total"] = time.perf_counter_ns() - t0
    memory = {"counter_bytes_per_query": list(pool.sizes), "pool_bytes": pool.nbytes,
              "ht_slots_per_query": [cpq.table.capacity for cpq in queues]}
    result = BatchResult(results, timing, memory)
    result.queues = queues
    return result


def merge_topk(per_partition, k: int, query_id: int = 0) -> TopKResult:
    """k-way merge of per-partition top-k lists already in global ids."""
    seen: set[int] = set()
    pool = []
    for part in per_partition:
        for i, c in part:
            if i in seen:
                raise ConfigurationError(f"object {i} reported by two partitions")
            seen.add(i)
            pool.append((i, c))
    entries = rank(pool, k)
    threshold = entries[-1][1] if len(entries) == k else 0
    return TopKResult(query_id, entries, threshold)


def execute_partitioned(partitions: list[IndexPartition], request: BatchRequest) -> BatchResult:
    t0 = time.perf_counter_ns()
    ranges = sorted(p.object_id_range for p in partitions)
    for (a0, a1), (b0, b1) in zip(ranges, ranges[1:]):
        if b0 < a1:
            raise ConfigurationError(f"partitions [{a0},{a1}) and [{b0},{b1}) overlap")
    for p in partitions:
        if p.object_id_range[0] != p.id_offset or \
                p.object_id_range[1] - p.object_id_range[0] != p.index.num_objects:
            raise ConfigurationError(f"partition {p.part_id} has an inconsistent id range")
    timing = dict.fromkeys(STAGES, 0)
    per_query: list[list[list[tuple[int, int]]]] = [[] for _ in request.queries]
    pool_bytes = 0
    for p in partitions:
        part = execute_batch(p.index, replace(request))
        for stage in STAGES:
            timing[stage] += part.timing[stage]
        pool_bytes = max(pool_bytes, part.memory.get("pool_bytes", 0))
        for qi, r in enumerate(part.results):
            per_query[qi].append([(i + p.id_offset, c) for i, c in r.entries])
    tm = time.perf_counter_ns()
    results = [merge_topk(lists, q.k, q.id) for lists, q in zip(per_query, request.queries)]
    timing["merge"] += time.perf_counter_ns() - tm
    timing["total"] = time.perf_counter_ns() - t0
    return BatchResult(results, timing, {"pool_bytes": pool_bytes})
