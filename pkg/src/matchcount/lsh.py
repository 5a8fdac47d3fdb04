"""LSH adapters: points -> match-count objects and queries.

Hash function ``i`` becomes keyword dim ``i`` and its (possibly re-hashed)
bucket becomes the token, so the match count of two encoded points is the
number of colliding functions and ``count / m`` estimates their similarity.

Two families are provided: p-stable hashing ``floor((a.x + b) / w)`` for
l2 space, and random binning for the Laplacian kernel
``exp(-||p - q||_1 / sigma)``. Large signatures are folded into ``[0, D)``
with a seeded 64-bit mixing function.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import norm

from .model import FlatKeywords, Keyword, ObjectRecord, Query, QueryItem

DEFAULT_EPS = 0.06
DEFAULT_DELTA = 0.06
DEFAULT_M = 237
DEFAULT_D = 8192
DEFAULT_BUCKETS = 67
DEFAULT_W = 4.0
EXACT_TAIL_LIMIT = 10_000

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, element-wise on a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.int64)).view(np.uint64)


def rehash_rows(seeds, signatures, D: int) -> np.ndarray:
    """Fold each signature row into ``[0, D)``.

    ``signatures`` is ``(n, d)`` integers (or ``(n,)`` for scalar
    signatures); ``seeds`` is a scalar or an ``(n,)`` array of seeds.
    """
    sig = _as_u64(signatures)
    if sig.ndim == 1:
        sig = sig[:, None]
    with np.errstate(over="ignore"):
        h = mix64(np.broadcast_to(np.asarray(seeds, dtype=np.uint64), (sig.shape[0],)) + _GOLDEN)
        for j in range(sig.shape[1]):
            h = mix64(h ^ (sig[:, j] + _GOLDEN * np.uint64(j + 1)))
    return (h % np.uint64(D)).astype(np.int64)


@dataclass(frozen=True)
class Rehasher:
    seed: int
    D: int

    def __post_init__(self):
        if self.D < 1:
            raise ValueError("D must be positive")

    def __call__(self, signature) -> int:
        return rehash(self, signature)


def rehash(r: Rehasher, signature) -> int:
    sig = np.atleast_1d(np.asarray(signature, dtype=np.int64))[None, :]
    return int(rehash_rows(r.seed, sig, r.D)[0])


@dataclass(frozen=True)
class PStableHash:
    a: np.ndarray
    b: float
    w: float

    def __post_init__(self):
        if self.w <= 0:
            raise ValueError("bucket width must be positive")


def pstable_hash(h: PStableHash, point) -> int:
    point = np.asarray(point, dtype=np.float64)
    if point.shape != np.shape(h.a):
        raise ValueError(f"point has shape {point.shape}, hash expects {np.shape(h.a)}")
    return int(math.floor((float(np.dot(h.a, point)) + h.b) / h.w))


def sample_pstable(d: int, w: float, rng: np.random.Generator) -> PStableHash:
    return PStableHash(rng.standard_normal(d), float(rng.uniform(0, w)), w)


@dataclass(frozen=True)
class RbhHash:
    """Randomly shifted grid. ``g`` holds one cell size per dimension."""

    g: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        g, u = np.asarray(self.g), np.asarray(self.u)
        if g.shape != u.shape:
            raise ValueError("g and u must have the same shape")
        if np.any(g <= 0) or np.any(u < 0) or np.any(u > g):
            raise ValueError("need g > 0 and 0 <= u <= g")


def rbh_hash(h: RbhHash, point) -> np.ndarray:
    point = np.asarray(point, dtype=np.float64)
    if point.shape != np.shape(h.u):
        raise ValueError(f"point has shape {point.shape}, hash expects {np.shape(h.u)}")
    return np.floor((point - h.u) / h.g).astype(np.int64)


def sample_grid_sizes(sigma: float, size, rng: np.random.Generator) -> np.ndarray:
    """Cell sizes from ``p(x) = x exp(-x/sigma) / sigma^2``, i.e. Gamma(2, sigma),
    drawn as a sum of two exponentials."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return rng.exponential(sigma, size) + rng.exponential(sigma, size)


def sample_rbh(sigma: float, d: int, rng: np.random.Generator) -> RbhHash:
    g = sample_grid_sizes(sigma, d, rng)
    return RbhHash(g, rng.uniform(0.0, 1.0, d) * g)


def laplacian_kernel(p, q, sigma: float) -> float:
    return float(np.exp(-np.abs(np.asarray(p) - np.asarray(q)).sum() / sigma))


class LshEncoder:
    """A bank of ``m`` hash functions with optional re-hashing into ``[0, D)``.

    Build with :meth:`pstable` or :meth:`rbh`; every parameter is stored
    explicitly so :meth:`to_json` round-trips bit-exactly.
    """

    def __init__(self, family: str, dim: int, params: dict, seeds: np.ndarray,
                 D: int | None, meta: dict | None = None):
        if family not in ("pstable", "rbh"):
            raise ValueError(f"unknown family {family!r}")
        self.family = family
        self.dim = dim
        self.params = params
        self.seeds = np.asarray(seeds, dtype=np.uint64)
        self.D = D
        self.meta = meta or {}
        if self.m < 1:
            raise ValueError("need at least one hash function")
        if family == "rbh" and D is None:
            raise ValueError("random binning signatures need a re-hash domain D")

    @property
    def m(self) -> int:
        return len(self.seeds)

    @classmethod
    def pstable(cls, dim: int, m: int = DEFAULT_M, w: float = DEFAULT_W,
                buckets: int = DEFAULT_BUCKETS, D: int | None = None, seed: int = 0,
                sample: np.ndarray | None = None) -> "LshEncoder":
        """l2 hashing. Without ``D`` raw buckets are offset by ``bucket_min`` and
        clamped into ``[0, buckets)``; ``bucket_min`` centres the sample's
        median bucket when a sample is given."""
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((m, dim))
        B = rng.uniform(0, w, m)
        seeds = rng.integers(0, 2**63, m, dtype=np.uint64)
        if sample is not None:
            raw = np.floor((np.asarray(sample, np.float64) @ A.T + B) / w)
            bucket_min = np.floor(np.median(raw, axis=0)).astype(np.int64) - buckets // 2
        else:
            bucket_min = np.full(m, -(buckets // 2), dtype=np.int64)
        params = {"A": A, "B": B, "w": float(w), "buckets": int(buckets), "bucket_min": bucket_min}
        return cls("pstable", dim, params, seeds, D, {"seed": seed})

    @classmethod
    def rbh(cls, dim: int, sigma: float, m: int = DEFAULT_M, D: int = DEFAULT_D,
            seed: int = 0) -> "LshEncoder":
        rng = np.random.default_rng(seed)
        G = sample_grid_sizes(sigma, (m, dim), rng)
        U = rng.uniform(0.0, 1.0, (m, dim)) * G
        seeds = rng.integers(0, 2**63, m, dtype=np.uint64)
        return cls("rbh", dim, {"G": G, "U": U, "sigma": float(sigma)}, seeds, D, {"seed": seed})

    def hash_function(self, i: int):
        p = self.params
        if self.family == "pstable":
            return PStableHash(p["A"][i], float(p["B"][i]), p["w"])
        return RbhHash(p["G"][i], p["U"][i])

    def rehasher(self, i: int) -> Rehasher | None:
        return None if self.D is None else Rehasher(int(self.seeds[i]), self.D)

    def encode(self, X) -> np.ndarray:
        """Token matrix ``(n, m)``: column ``i`` is ``f_i`` of every point."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ValueError(f"points have dimension {X.shape[1]}, encoder expects {self.dim}")
        n = X.shape[0]
        out = np.empty((n, self.m), dtype=np.int64)
        p = self.params
        if self.family == "pstable":
            raw = np.floor((X @ p["A"].T + p["B"]) / p["w"]).astype(np.int64)
            if self.D is None:
                return np.clip(raw - p["bucket_min"], 0, p["buckets"] - 1)
            for i in range(self.m):
                out[:, i] = rehash_rows(self.seeds[i], raw[:, i], self.D)
            return out
        for i in range(self.m):
            sig = np.floor((X - p["U"][i]) / p["G"][i]).astype(np.int64)
            out[:, i] = rehash_rows(self.seeds[i], sig, self.D)
        return out

    def encode_dataset(self, X) -> FlatKeywords:
        return FlatKeywords.from_token_matrix(self.encode(X))

    def to_json(self) -> str:
        def enc(v):
            if isinstance(v, np.ndarray):
                return {"dtype": str(v.dtype), "data": v.tolist()}
            return v
        body = {
            "family": self.family, "dim": self.dim, "m": self.m, "D": self.D,
            "seeds": [int(s) for s in self.seeds],
            "params": {k: enc(v) for k, v in self.params.items()},
            "meta": self.meta,
        }
        return json.dumps(body, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LshEncoder":
        body = json.loads(text)
        params = {
            k: np.asarray(v["data"], dtype=v["dtype"]) if isinstance(v, dict) and "dtype" in v else v
            for k, v in body["params"].items()
        }
        return cls(body["family"], body["dim"], params,
                   np.asarray(body["seeds"], dtype=np.uint64), body["D"], body.get("meta"))


def encode_point(encoder: LshEncoder, point, id: int = 0) -> ObjectRecord:
    tokens = encoder.encode(point)[0]
    return ObjectRecord(id, [Keyword(i, int(t)) for i, t in enumerate(tokens)])


def encode_query_point(encoder: LshEncoder, point, k: int = 1, id: int = 0) -> Query:
    tokens = encoder.encode(point)[0]
    return Query(id, [QueryItem.point(i, int(t)) for i, t in enumerate(tokens)], k)


def estimate_similarity(c: int, m: int) -> float:
    if not 0 <= c <= m:
        raise ValueError(f"count {c} outside [0, {m}]")
    return c / m


def required_m_hoeffding(eps: float, delta: float) -> int:
    """Hash functions needed for ``|c/m - sim| < eps + 1/D`` w.p. ``1 - delta``."""
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("need 0 < eps < 1 and 0 < delta < 1")
    return max(1, math.ceil(2 * math.log(3 / delta) / eps ** 2))


def _exact(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(repr(float(x)))


def window_bounds(m: int, s, eps) -> tuple[int, int]:
    """``[floor((s - eps) m), ceil((s + eps) m)]`` in exact arithmetic, clamped."""
    s, eps = _exact(s), _exact(eps)
    lo = math.floor((s - eps) * m)
    hi = math.ceil((s + eps) * m)
    return max(lo, 0), min(hi, m)


def binomial_window_prob(m: int, s, eps, exact_limit: int = EXACT_TAIL_LIMIT) -> float:
    """``P[lo <= c <= hi]`` for ``c ~ Binomial(m, s)`` over :func:`window_bounds`.

    Exact summation in log space up to ``exact_limit``; above it a normal
    approximation with continuity correction.
    """
    lo, hi = window_bounds(m, s, eps)
    sf = float(s)
    if m <= exact_limit:
        c = np.arange(lo, hi + 1, dtype=np.float64)
        logp = (gammaln(m + 1) - gammaln(c + 1) - gammaln(m - c + 1)
                + c * math.log(sf) + (m - c) * math.log1p(-sf))
        return float(min(1.0, math.exp(logsumexp(logp))))
    mu, sd = m * sf, math.sqrt(m * sf * (1 - sf))
    return float(norm.cdf((hi + 0.5 - mu) / sd) - norm.cdf((lo - 0.5 - mu) / sd))


def required_m_binomial(s: float, eps: float = DEFAULT_EPS, delta: float = DEFAULT_DELTA) -> int:
    """Smallest m from which the window probability stays ``>= 1 - delta``.

    The window probability is not monotone in m (the floor/ceil rounding makes
    very small m trivially pass), so the answer is one past the largest
    failing m. Hoeffding guarantees every m above
    ``ln(2/delta) / (2 eps^2)`` passes, which bounds the downward search.
    """
    if not 0 < s < 1:
        raise ValueError("need 0 < s < 1")
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("need 0 < eps < 1 and 0 < delta < 1")
    safe = math.ceil(math.log(2 / delta) / (2 * eps ** 2))
    for m in range(safe, 0, -1):
        if binomial_window_prob(m, s, eps) < 1 - delta:
            return m + 1
    return 1


def approximation_ratio(reported, truth, query, p_norm: float = 2) -> float:
    """Mean of reported-to-true neighbour distance ratios (rank by rank)."""
    reported = np.atleast_2d(np.asarray(reported, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if reported.shape != truth.shape:
        raise ValueError("reported and truth must both hold k points")
    q = np.asarray(query, dtype=np.float64)
    dr = np.linalg.norm(reported - q, ord=p_norm, axis=1)
    dt = np.linalg.norm(truth - q, ord=p_norm, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where((dr == 0) & (dt == 0), 1.0, dr / dt)
    return float(ratios.mean())


def kernel_width_heuristic(X, max_pairs: int = 1_000_000, seed: int = 0) -> float:
    """Mean pairwise l1 distance; pairs are subsampled deterministically when
    there are more than ``max_pairs``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(n, 1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, max_pairs)
        j = rng.integers(0, n - 1, max_pairs)
        j = j + (j >= i)  # uniform over j != i
    d = np.abs(X[i] - X[j]).sum(axis=1)
    sigma = float(d.mean())
    if sigma == 0:
        warnings.warn("all sampled points coincide; kernel width is 0", RuntimeWarning)
    return sigma
