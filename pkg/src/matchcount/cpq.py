"""Count Priority Queue: exact top-k by match count without a full sort.

Three layers per query:

* ``BitmapCounter`` -- one packed ``w``-bit counter per object id.
* ``Gate`` -- the ZipperArray ``ZA`` (1-based, cells capped at k) and the
  AuditThreshold ``AT``. An updated counter reaching ``AT`` passes the gate.
* ``CountHashTable`` -- Robin Hood open addressing holding only the ids that
  passed the gate, with entries below ``AT - 1`` treated as dead slots.

At quiescence the k-th largest count is exactly ``AT - 1``, so extraction is
one scan of the hash table. The per-update and per-span loops are numba
kernels operating on the arrays owned by these classes; they release the GIL
so the engine can drive different queries from different threads.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ContractViolation, CounterOverflowError, TableFullError

WIDTHS = (4, 8, 16, 32)
HT_CAPACITY_FACTOR = 2
_EMPTY = -1

# kernel status codes
_OK = 0
_OVERFLOW = -1
_FULL = -2
_BAD_ID = -3

# state vector slots
_AT = 0
_PASSES = 1
_PROBES = 2
_FAILED_ID = 3
_UPDATES = 4


def counter_width(max_count: int) -> int:
    """Smallest of 4/8/16/32 bits whose largest value reaches ``max_count``."""
    for w in WIDTHS:
        if (1 << w) - 1 >= max_count:
            return w
    raise ContractViolation(f"max_count {max_count} needs more than 32 bits")


def counter_bytes(num_objects: int, max_count: int, packed: bool = True) -> int:
    w = counter_width(max_count) if packed else 32
    return -(-num_objects * w // 8)


def ht_capacity(k: int, max_count: int) -> int:
    need = HT_CAPACITY_FACTOR * k * max_count
    cap = 2
    while cap < need:
        cap <<= 1
    return cap


@numba.njit(cache=True, nogil=True)
def _bc_get(bc, w, i):
    if w == 4:
        return (bc[i >> 1] >> ((i & 1) * 4)) & 0xF
    if w == 8:
        return np.int64(bc[i])
    if w == 16:
        j = 2 * i
        return np.int64(bc[j]) | (np.int64(bc[j + 1]) << 8)
    j = 4 * i
    return (np.int64(bc[j]) | (np.int64(bc[j + 1]) << 8)
            | (np.int64(bc[j + 2]) << 16) | (np.int64(bc[j + 3]) << 24))


@numba.njit(cache=True, nogil=True)
def _bc_set(bc, w, i, v):
    if w == 4:
        j = i >> 1
        sh = (i & 1) * 4
        bc[j] = (bc[j] & ~np.uint8(0xF << sh)) | np.uint8(v << sh)
    elif w == 8:
        bc[i] = v
    elif w == 16:
        bc[2 * i] = v & 0xFF
        bc[2 * i + 1] = (v >> 8) & 0xFF
    else:
        for b in range(4):
            bc[4 * i + b] = (v >> (8 * b)) & 0xFF


@numba.njit(cache=True, nogil=True)
def _home(obj_id, bits):
    h = np.uint64(obj_id) * np.uint64(0x9E3779B97F4A7C15)
    return np.int64(h >> np.uint64(64 - bits))


@numba.njit(cache=True, nogil=True)
def _ht_insert(ids, vals, ages, bits, obj_id, val, at):
    """Returns the number of probes, or ``_FULL``."""
    cap = ids.shape[0]
    mask = cap - 1
    j = _home(obj_id, bits)
    probes = 0
    # the id may already live further down its probe run; slots never empty
    # again once used, so stopping at the first empty slot is exact
    for _ in range(cap):
        probes += 1
        if ids[j] == -1:
            break
        if ids[j] == obj_id:
            if val > vals[j]:
                vals[j] = val
            return probes
        j = (j + 1) & mask
    cur_id = obj_id
    cur_val = val
    cur_age = 0
    j = _home(obj_id, bits)
    for _ in range(cap):
        probes += 1
        if ids[j] == -1 or vals[j] < at - 1:
            ids[j] = cur_id
            vals[j] = cur_val
            ages[j] = cur_age
            return probes
        if ages[j] < cur_age:
            t_id, t_val, t_age = ids[j], vals[j], ages[j]
            ids[j] = cur_id
            vals[j] = cur_val
            ages[j] = cur_age
            cur_id, cur_val, cur_age = t_id, t_val, t_age
        j = (j + 1) & mask
        cur_age += 1
    return -2


@numba.njit(cache=True, nogil=True)
def _update(bc, w, za, state, ids, vals, ages, bits, k, max_count, num_objects,
            obj_id, observed_at):
    if obj_id < 0 or obj_id >= num_objects:
        state[3] = obj_id
        return -3
    v = _bc_get(bc, w, obj_id) + 1
    if v > max_count:
        state[3] = obj_id
        return -1
    _bc_set(bc, w, obj_id, v)
    state[4] += 1
    at = state[0] if observed_at < 0 else observed_at
    if v >= at:
        # dead-slot test uses the live AT; only the gate read may lag
        r = _ht_insert(ids, vals, ages, bits, obj_id, v, state[0])
        if r < 0:
            state[3] = obj_id
            return -2
        state[1] += 1
        state[2] += r
        if za[v] < k:
            za[v] += 1
        while state[0] <= max_count and za[state[0]] >= k:
            state[0] += 1
    return 0


@numba.njit(cache=True, nogil=True)
def _scan(bc, w, za, state, ids, vals, ages, bits, k, max_count, num_objects,
          list_array, starts, ends):
    for s in range(starts.shape[0]):
        for p in range(starts[s], ends[s]):
            r = _update(bc, w, za, state, ids, vals, ages, bits, k, max_count,
                        num_objects, list_array[p], -1)
            if r != 0:
                return r
    return 0


@numba.njit(cache=True, nogil=True)
def _unpack_all(bc, w, n):
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _bc_get(bc, w, i)
    return out


class BitmapCounter:
    """Packed per-object counters; ``w_bits`` chosen from ``max_count``."""

    def __init__(self, num_objects: int, max_count: int, buffer: np.ndarray | None = None):
        self.num_objects = num_objects
        self.max_count = max_count
        self.w_bits = counter_width(max_count)
        nbytes = counter_bytes(num_objects, max_count)
        if buffer is None:
            buffer = np.zeros(nbytes, dtype=np.uint8)
        elif buffer.dtype != np.uint8 or buffer.shape != (nbytes,):
            raise ContractViolation("counter buffer has the wrong size or dtype")
        self.bits = buffer

    @property
    def nbytes(self) -> int:
        return self.bits.nbytes

    def __getitem__(self, i: int) -> int:
        return int(_bc_get(self.bits, self.w_bits, i))

    def to_array(self) -> np.ndarray:
        return _unpack_all(self.bits, self.w_bits, self.num_objects)


class Gate:
    """ZipperArray plus AuditThreshold; ``ZA`` is exposed 1-based."""

    def __init__(self, max_count: int, k: int, state: np.ndarray):
        self.max_count = max_count
        self.k = k
        # cell 0 unused, cell max_count + 1 is a sentinel that stays 0
        self.cells = np.zeros(max_count + 2, dtype=np.int64)
        self._state = state

    @property
    def audit_threshold(self) -> int:
        return int(self._state[_AT])

    @property
    def zipper_array(self) -> list[int]:
        return self.cells[1:self.max_count + 1].tolist()

    def za(self, v: int) -> int:
        """``ZA[v]`` with 1-based semantics; 0 outside ``1..max_count``."""
        if 1 <= v <= self.max_count + 1:
            return int(self.cells[v])
        return 0

    def invariants_hold(self) -> bool:
        at = self.audit_threshold
        return self.za(at) < self.k and (at == 1 or self.za(at - 1) >= self.k)


class CountHashTable:
    def __init__(self, capacity: int):
        if capacity < 2 or capacity & (capacity - 1):
            raise ContractViolation("capacity must be a power of two >= 2")
        self.capacity = capacity
        self.bits = capacity.bit_length() - 1
        self.ids = np.full(capacity, _EMPTY, dtype=np.int64)
        self.vals = np.zeros(capacity, dtype=np.int64)
        self.ages = np.zeros(capacity, dtype=np.int64)

    def home(self, obj_id: int) -> int:
        return int(_home(obj_id, self.bits))

    def insert(self, obj_id: int, value: int, current_at: int) -> int:
        if value < 1:
            raise ContractViolation("hash table values must be >= 1")
        r = _ht_insert(self.ids, self.vals, self.ages, self.bits, obj_id, value, current_at)
        if r < 0:
            raise TableFullError(f"hash table full inserting object {obj_id}")
        return r

    def get(self, obj_id: int) -> int | None:
        hit = np.flatnonzero(self.ids == obj_id)
        return int(self.vals[hit[0]]) if len(hit) else None

    def entries(self) -> list[tuple[int, int, int]]:
        """Occupied slots as ``(id, value, age)``."""
        occ = np.flatnonzero(self.ids != _EMPTY)
        return list(zip(self.ids[occ].tolist(), self.vals[occ].tolist(), self.ages[occ].tolist()))

    def population(self, live_from: int = 0) -> int:
        """Occupied slots holding a value ``>= live_from``."""
        return int(np.count_nonzero((self.ids != _EMPTY) & (self.vals >= live_from)))

    def as_dict(self) -> dict[int, int]:
        return {i: v for i, v, _ in self.entries()}


@dataclass
class TopKResult:
    query_id: int
    entries: list[tuple[int, int]]
    threshold: int
    meta: dict = field(default_factory=dict)

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.entries]

    @property
    def counts(self) -> list[int]:
        return [c for _, c in self.entries]

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "topk": [{"id": i, "count": c} for i, c in self.entries],
            "threshold": self.threshold,
        }


def rank(entries, k: int) -> list[tuple[int, int]]:
    """Order by count descending, then id ascending, and keep ``k``."""
    return sorted(entries, key=lambda e: (-e[1], e[0]))[:k]


class CountPriorityQueue:
    """One query's c-PQ. ``update`` is Algorithm-1 exact and order independent
    in what it extracts; ``lock`` serialises updates from several threads."""

    def __init__(self, num_objects: int, max_count: int, k: int,
                 counter_buffer: np.ndarray | None = None, query_id: int = 0):
        if max_count < 1:
            raise ContractViolation("max_count must be >= 1")
        if k < 1:
            raise ContractViolation("k must be >= 1")
        if num_objects < 0:
            raise ContractViolation("num_objects must be >= 0")
        self.num_objects = num_objects
        self.max_count = max_count
        self.k = k
        self.query_id = query_id
        self.state = np.zeros(5, dtype=np.int64)
        self.state[_AT] = 1
        self.counter = BitmapCounter(num_objects, max_count, counter_buffer)
        self.gate = Gate(max_count, k, self.state)
        self.table = CountHashTable(ht_capacity(k, max_count))
        self.lock = threading.Lock()

    @property
    def audit_threshold(self) -> int:
        return int(self.state[_AT])

    @property
    def gate_passes(self) -> int:
        return int(self.state[_PASSES])

    @property
    def probes(self) -> int:
        return int(self.state[_PROBES])

    @property
    def updates(self) -> int:
        return int(self.state[_UPDATES])

    def _args(self):
        t = self.table
        return (self.counter.bits, self.counter.w_bits, self.gate.cells, self.state,
                t.ids, t.vals, t.ages, t.bits, self.k, self.max_count, self.num_objects)

    def _raise(self, code: int):
        bad = int(self.state[_FAILED_ID])
        if code == _OVERFLOW:
            raise CounterOverflowError(
                f"object {bad} exceeded max_count {self.max_count}")
        if code == _FULL:
            raise TableFullError(f"hash table full inserting object {bad}")
        raise ContractViolation(f"object id {bad} outside [0, {self.num_objects})")

    def update(self, obj_id: int, observed_at: int | None = None) -> None:
        """Apply one increment. ``observed_at`` simulates a stale read of AT
        (any value between 1 and the current AT) by a concurrent worker."""
        obs = -1 if observed_at is None else int(observed_at)
        if observed_at is not None and not 1 <= obs <= self.audit_threshold:
            raise ContractViolation("observed AT must lie in [1, current AT]")
        r = _update(*self._args(), int(obj_id), obs)
        if r:
            self._raise(r)

    def scan(self, list_array: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> None:
        """Apply one update per object id in every ``list_array[s:e]``."""
        r = _scan(*self._args(), list_array, starts, ends)
        if r:
            self._raise(r)

    def counts(self) -> np.ndarray:
        return self.counter.to_array()

    def extract(self, k: int | None = None, resolve_ties: bool = False) -> TopKResult:
        """Top-k from one pass over the hash table.

        Entries at or above ``AT - 1`` are collected and ranked by
        (count desc, id asc). With ``resolve_ties`` the ids tied at the
        threshold are instead taken in ascending order from the counters, so
        the chosen ids match a full sort of all counts exactly.
        """
        k = self.k if k is None else k
        threshold = self.audit_threshold - 1
        t = self.table
        live = (t.ids != _EMPTY) & (t.vals >= threshold)
        cand = list(zip(t.ids[live].tolist(), t.vals[live].tolist()))
        if resolve_ties and threshold >= 1:
            above = [e for e in cand if e[1] > threshold]
            tied = np.flatnonzero(self.counts() == threshold)
            cand = above + [(int(i), threshold) for i in tied[:max(k - len(above), 0)]]
        entries = rank(cand, k)
        return TopKResult(self.query_id, entries, threshold,
                          {"ht_population": int(live.sum()), "gate_passes": self.gate_passes})

    def invariants_hold(self) -> bool:
        return self.gate.invariants_hold()


def cpq_new(num_objects: int, max_count: int, k: int) -> CountPriorityQueue:
    return CountPriorityQueue(num_objects, max_count, k)


def cpq_update(cpq: CountPriorityQueue, obj_id: int) -> None:
    cpq.update(obj_id)


def ht_insert(table: CountHashTable, obj_id: int, value: int, current_at: int) -> None:
    table.insert(obj_id, value, current_at)


def cpq_extract_topk(cpq: CountPriorityQueue, k: int | None = None) -> TopKResult:
    return cpq.extract(k)


class CounterPool:
    """One allocation holding the packed counters of a whole batch."""

    def __init__(self, num_objects: int, max_counts: list[int]):
        self.num_objects = num_objects
        self.sizes = [counter_bytes(num_objects, m) for m in max_counts]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes, dtype=np.int64)])
        self.buffer = np.zeros(int(self.offsets[-1]), dtype=np.uint8)

    @property
    def nbytes(self) -> int:
        return self.buffer.nbytes

    def slot(self, i: int) -> np.ndarray:
        return self.buffer[self.offsets[i]:self.offsets[i + 1]]
