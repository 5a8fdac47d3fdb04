"""Shotgun-and-assembly adapters for sequences and short documents.

A sequence is cut into ordered n-grams ``(gram, i)`` where ``i`` numbers the
repeats of ``gram`` left to right, so the match count between two gram sets
is the sum over distinct grams of the smaller multiplicity. That count lower
bounds the edit distance, which lets :func:`verify_candidates` stop early and
decide whether the top-K candidate list provably contains the true 1-NN.

Documents become sets of word ids; their match count is the size of the word
set intersection.
"""
from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numba
import numpy as np

from .errors import ConstructionError, DomainError, NoCandidateError
from .formats import read_lines
from .index import InvertedIndex, build_index
from .model import FlatKeywords, Keyword, ObjectRecord, Query, QueryItem

DEFAULT_N = 3
DEFAULT_K = 32
ESCALATION = (32, 64, 128, 256)


class OrderedNGram(NamedTuple):
    gram: str
    occurrence: int


@dataclass
class SequenceRecord:
    id: int
    text: str
    grams: list[OrderedNGram]


@dataclass
class VerificationOutcome:
    best_id: int
    best_distance: int
    certified: bool
    K_used: int
    threshold_at_stop: int
    ed_calls: int = 0


def decompose_sequence(text: str, n: int) -> list[OrderedNGram]:
    if n < 1:
        raise ConstructionError("n must be >= 1")
    seen: Counter = Counter()
    out = []
    for i in range(len(text) - n + 1):
        g = text[i:i + n]
        out.append(OrderedNGram(g, seen[g]))
        seen[g] += 1
    return out


def sequence_record(id: int, text: str, n: int = DEFAULT_N) -> SequenceRecord:
    return SequenceRecord(id, text, decompose_sequence(text, n))


def shared_gram_count(s: str, q: str, n: int) -> int:
    """Sum over distinct grams of the smaller multiplicity in ``s`` and ``q``."""
    cs = Counter(s[i:i + n] for i in range(len(s) - n + 1))
    cq = Counter(q[i:i + n] for i in range(len(q) - n + 1))
    return sum((cs & cq).values())


def count_lower_bound(qlen: int, slen: int, n: int, tau: int) -> int:
    """Least gram match count two strings at edit distance ``tau`` can have."""
    if n < 1:
        raise ConstructionError("n must be >= 1")
    return max(qlen, slen) - n + 1 - tau * n


def topk_certificate(c_K: int, qlen: int, n: int, tau_kprime: int) -> bool:
    """True when no object outside the candidate list can beat ``tau_kprime``."""
    return c_K < qlen - n + 1 - tau_kprime * n


# -- edit distance ---------------------------------------------------------

def _codes(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)


@numba.njit(cache=True, nogil=True)
def _levenshtein(a, b):
    m, n = len(a), len(b)
    if m < n:
        a, b, m, n = b, a, n, m
    prev = np.arange(n + 1)
    cur = np.empty(n + 1, dtype=prev.dtype)
    for i in range(1, m + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, n + 1):
            sub = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            ins = cur[j - 1] + 1
            dele = prev[j] + 1
            best = sub if sub < ins else ins
            cur[j] = best if best < dele else dele
        prev, cur = cur, prev
    return prev[n]


def edit_distance(a: str, b: str) -> int:
    """Unit-cost Levenshtein distance."""
    if a == b:
        return 0
    return int(_levenshtein(_codes(a), _codes(b)))


@numba.njit(cache=True, nogil=True)
def _myers_scan(peq, m, text, offsets, out):
    # Bit-parallel edit distance of one pattern (m <= 64) against many texts.
    mask_all = np.uint64(0xFFFFFFFFFFFFFFFF) if m == 64 else (np.uint64(1) << np.uint64(m)) - np.uint64(1)
    high = np.uint64(1) << np.uint64(m - 1)
    one = np.uint64(1)
    for t in range(len(offsets) - 1):
        pv = mask_all
        mv = np.uint64(0)
        score = m
        for p in range(offsets[t], offsets[t + 1]):
            eq = peq[text[p]]
            xv = eq | mv
            xh = (((eq & pv) + pv) ^ pv) | eq
            ph = mv | ~(xh | pv)
            mh = pv & xh
            if ph & high:
                score += 1
            elif mh & high:
                score -= 1
            ph = ((ph << one) | one) & mask_all
            mh = (mh << one) & mask_all
            pv = (mh | ~(xv | ph)) & mask_all
            mv = ph & xv
        out[t] = score


class SequenceStore:
    """Concatenated code-point storage for fast brute-force edit distance."""

    def __init__(self, texts: Sequence[str]):
        self.texts = list(texts)
        lens = np.fromiter((len(t) for t in self.texts), dtype=np.int64, count=len(self.texts))
        self.lengths = lens
        self.offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        raw = _codes("".join(self.texts)) if self.texts else np.zeros(0, dtype=np.int64)
        # Dense symbol ids keep the match-vector table tiny.
        self.alphabet, self.codes = np.unique(raw, return_inverse=True)
        self.codes = self.codes.astype(np.int64).ravel()

    def __len__(self):
        return len(self.texts)

    def __getitem__(self, i: int) -> str:
        return self.texts[i]

    def distances(self, query: str) -> np.ndarray:
        """Edit distance from ``query`` to every stored sequence."""
        out = np.empty(len(self.texts), dtype=np.int64)
        m = len(query)
        if m == 0:
            out[:] = self.lengths
            return out
        qc = _codes(query)
        pos = np.searchsorted(self.alphabet, qc)
        known = (pos < len(self.alphabet)) & (self.alphabet[np.minimum(pos, len(self.alphabet) - 1)] == qc)
        # Symbols absent from the corpus map to an id no stored text uses.
        qd = np.where(known, pos, len(self.alphabet)).astype(np.int64)
        if m > 64:
            for t in range(len(self.texts)):
                out[t] = _levenshtein(qd, self.codes[self.offsets[t]:self.offsets[t + 1]])
            return out
        peq = np.zeros(len(self.alphabet) + 1, dtype=np.uint64)
        for i, c in enumerate(qd):
            peq[c] |= np.uint64(1) << np.uint64(i)
        _myers_scan(peq, m, self.codes, self.offsets, out)
        return out

    def nearest(self, query: str) -> tuple[int, int]:
        """Brute-force 1-NN ``(id, distance)``, ties broken by smaller id."""
        d = self.distances(query)
        i = int(np.argmin(d))
        return i, int(d[i])


# -- verification ----------------------------------------------------------

def verify_candidates(query: str, candidates: Sequence[tuple[int, int]], n: int,
                      texts: Sequence[str], K: int | None = None,
                      early_break: bool = True) -> VerificationOutcome:
    """Scan the top-K candidates by count, tightening the best edit distance.

    ``K`` is the list size that was requested from the c-PQ. When fewer than
    ``K`` candidates came back, every object sharing a gram with the query is
    in the list and the K-th count is taken as 0.
    """
    if not candidates:
        raise NoCandidateError("no candidates to verify")
    K = len(candidates) if K is None else K
    qlen = len(query)
    best_id = int(candidates[0][0])
    tau = edit_distance(query, texts[best_id])
    calls = 1
    theta = qlen - n + 1 - n * (tau - 1)
    for sid, cnt in candidates[1:]:
        if early_break and theta > cnt:
            break
        s = texts[sid]
        if abs(qlen - len(s)) > tau:
            continue
        d = edit_distance(query, s)
        calls += 1
        if d < tau:
            tau, best_id = d, int(sid)
            theta = qlen - n + 1 - n * (tau - 1)
    c_K = int(candidates[K - 1][1]) if len(candidates) >= K else 0
    return VerificationOutcome(best_id, int(tau), topk_certificate(c_K, qlen, n, tau),
                               K, int(theta), calls)


# -- sequence index --------------------------------------------------------

def gram_dim(gram: str) -> int:
    """Stable 16-bit bucket of a gram string."""
    return zlib.crc32(gram.encode("utf-8")) & 0xFFFF


@dataclass
class GramVocabulary:
    """Per-dim table giving every distinct gram a small disambiguator."""

    table: dict[str, tuple[int, int]] = field(default_factory=dict)
    per_dim: Counter = field(default_factory=Counter)

    def code(self, gram: str, grow: bool = True) -> tuple[int, int] | None:
        hit = self.table.get(gram)
        if hit is not None or not grow:
            return hit
        dim = gram_dim(gram)
        dis = self.per_dim[dim]
        if dis >= 1 << 16:
            raise DomainError(f"dim {dim} holds more than 65536 distinct grams")
        self.per_dim[dim] += 1
        self.table[gram] = (dim, dis)
        return dim, dis


def _token(dis: int, occ: int) -> int:
    if occ >= 1 << 16:
        raise DomainError("gram occurs more than 65535 times in one sequence")
    return (dis << 16) | occ


def encode_sequence(id: int, text: str, n: int, vocab: GramVocabulary) -> ObjectRecord:
    kws = []
    for g, occ in decompose_sequence(text, n):
        dim, dis = vocab.code(g)
        kws.append(Keyword(dim, _token(dis, occ)))
    return ObjectRecord(id, kws)


def encode_sequence_query(text: str, n: int, vocab: GramVocabulary, k: int = 1,
                          id: int = 0) -> Query | None:
    """Point items for the query's known grams; ``None`` if none are known."""
    items = []
    for g, occ in decompose_sequence(text, n):
        hit = vocab.code(g, grow=False)
        if hit is not None and occ < 1 << 16:
            items.append(QueryItem.point(hit[0], _token(hit[1], occ)))
    return Query(id, items, k) if items else None


class SequenceIndex:
    """Index over ordered n-grams plus the texts needed for verification."""

    def __init__(self, texts: Sequence[str], n: int = DEFAULT_N,
                 index: InvertedIndex | None = None, vocab: GramVocabulary | None = None):
        """Index ``texts``; pass a saved ``index`` and ``vocab`` to skip the build."""
        if n < 1:
            raise ConstructionError("n must be >= 1")
        self.n = n
        self.store = SequenceStore(texts)
        if index is not None and vocab is not None:
            if index.num_objects != len(self.store):
                raise ConstructionError("index and texts disagree on the number of sequences")
            self.vocab, self.index = vocab, index
            return
        self.vocab = GramVocabulary()
        obj, dims, toks = [], [], []
        for i, t in enumerate(self.store.texts):
            for g, occ in decompose_sequence(t, n):
                dim, dis = self.vocab.code(g)
                obj.append(i)
                dims.append(dim)
                toks.append(_token(dis, occ))
        self.index: InvertedIndex = build_index(FlatKeywords(obj, dims, toks, len(self.store)))

    def __len__(self):
        return len(self.store)

    def query(self, text: str, k: int = 1, id: int = 0) -> Query | None:
        return encode_sequence_query(text, self.n, self.vocab, k, id)

    def search(self, queries: Sequence[str], K: int = DEFAULT_K, escalate: bool = True,
               **engine_opts) -> list[VerificationOutcome]:
        """1-NN search: retrieve top-K by gram count, verify, escalate K if uncertified.

        With ``escalate`` the list size runs through 32, 64, 128, 256 (starting
        at ``K``) and then falls back to a full edit-distance scan, which is
        always certified.
        """
        from .engine import BatchRequest, execute_batch

        schedule = [K] + [s for s in ESCALATION if s > K] if escalate else [K]
        out: list[VerificationOutcome | None] = [None] * len(queries)
        pending = list(range(len(queries)))
        for size in schedule:
            encoded = {i: self.query(queries[i], size, i) for i in pending}
            batch = [q for q in encoded.values() if q is not None]
            res = {r.query_id: r for r in execute_batch(self.index, BatchRequest(batch, **engine_opts)).results}
            still = []
            for i in pending:
                r = res.get(i)
                if r is None or not r.entries:
                    still.append(i)
                    continue
                v = verify_candidates(queries[i], r.entries, self.n, self.store.texts, K=size)
                out[i] = v
                if not v.certified:
                    still.append(i)
            pending = still
            if not pending:
                return out
        if escalate:
            for i in pending:
                best, dist = self.store.nearest(queries[i])
                out[i] = VerificationOutcome(best, dist, True, len(self.store), 0, len(self.store))
        elif pending:
            for i in pending:
                if out[i] is None:
                    raise NoCandidateError(f"query {i} shares no gram with the dataset")
        return out


# -- documents ---------------------------------------------------------------

@dataclass
class Vocabulary:
    """Word -> id table grown while building a document index."""

    ids: dict[str, int] = field(default_factory=dict)

    def id_of(self, word: str, grow: bool = True) -> int | None:
        i = self.ids.get(word)
        if i is None and grow:
            i = self.ids[word] = len(self.ids)
        return i

    def __len__(self):
        return len(self.ids)


def tokenize(text: str, stopwords: Iterable[str] = ()) -> list[str]:
    """Lowercased whitespace tokens, stop words removed, first-seen order, no repeats."""
    stop = set(stopwords)
    return list(dict.fromkeys(w for w in text.lower().split() if w not in stop))


def decompose_document(text: str, vocab: Vocabulary | None = None, id: int = 0,
                       stopwords: Iterable[str] = (), grow: bool = True) -> ObjectRecord:
    vocab = Vocabulary() if vocab is None else vocab
    ids = [vocab.id_of(w, grow) for w in tokenize(text, stopwords)]
    return ObjectRecord(id, [Keyword(0, i) for i in ids if i is not None])


def document_query(text: str, vocab: Vocabulary, k: int = 1, id: int = 0,
                   stopwords: Iterable[str] = ()) -> Query | None:
    rec = decompose_document(text, vocab, id, stopwords, grow=False)
    if not rec.keywords:
        return None
    return Query(id, [QueryItem.point(kw.dim, kw.token) for kw in rec.keywords], k)


def read_stopwords(path) -> set[str]:
    return {w.strip().lower() for w in read_lines(path) if w.strip()}
