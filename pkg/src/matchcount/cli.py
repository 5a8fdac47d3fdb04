"""``mcx``: build indexes, run batch queries, estimate m, benchmark.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 internal
invariant violation (including an ``--oracle`` mismatch).
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import lsh, sa
from .engine import BatchRequest, execute_batch, execute_partitioned
from .errors import ContractViolation, DataFormatError, EngineError, MatchCountError
from .formats import (RelationalSchema, read_json_lines, read_lines, read_relational,
                      read_vectors, relational_query)
from .index import InvertedIndex, build_index, partition_dataset
from .model import FlatKeywords, Query

ADAPTERS = ("relational", "vectors-pstable", "vectors-rbh", "sequences", "documents")
FORMATS = {"relational": "csv", "vectors-pstable": "vectors", "vectors-rbh": "vectors",
           "sequences": "lines", "documents": "lines"}
SIDECAR_VERSION = 1

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sidecar_path(index_path) -> Path:
    return Path(str(index_path) + ".json")


# -- build -------------------------------------------------------------------

def _encode_dataset(args):
    """Returns (flat keywords or None, prebuilt index or None, encoder dict)."""
    adapter, path = args.adapter, args.dataset
    if args.format and args.format != FORMATS[adapter]:
        raise UsageError(f"adapter {adapter} reads format {FORMATS[adapter]}, not {args.format}")
    if adapter == "relational":
        flat, schema = read_relational(path, args.schema)
        return flat, None, {"schema": schema.to_json()}
    if adapter.startswith("vectors"):
        X = read_vectors(path)
        if len(X) == 0:
            raise DataFormatError(f"{path}: no records")
        if adapter == "vectors-pstable":
            enc = lsh.LshEncoder.pstable(X.shape[1], args.m, args.w, args.buckets, args.D,
                                         args.seed, sample=X)
        else:
            sigma = args.sigma if args.sigma else lsh.kernel_width_heuristic(X, seed=args.seed)
            enc = lsh.LshEncoder.rbh(X.shape[1], sigma, args.m, args.D or lsh.DEFAULT_D, args.seed)
        return enc.encode_dataset(X), None, {"lsh": json.loads(enc.to_json())}
    lines = read_lines(path)
    if not lines:
        raise DataFormatError(f"{path}: no records")
    if adapter == "sequences":
        si = sa.SequenceIndex(lines, args.n)
        return None, si.index, {"n": args.n, "grams": si.vocab.table}
    stop = sorted(sa.read_stopwords(args.stopwords)) if args.stopwords else []
    vocab = sa.Vocabulary()
    recs = [sa.decompose_document(t, vocab, i, stop) for i, t in enumerate(lines)]
    return FlatKeywords.from_records(recs), None, {"vocab": list(vocab.ids), "stopwords": stop}


def cmd_build(args) -> int:
    if not args.dataset or not args.index or not args.adapter:
        raise UsageError("build needs --dataset, --adapter and --index")
    flat, index, encoder = _encode_dataset(args)
    if index is None:
        index = build_index(flat, args.split_threshold)
    index.save(args.index)
    side = {
        "version": SIDECAR_VERSION,
        "adapter": args.adapter,
        "index_sha256": sha256_file(args.index),
        "dataset": {"path": str(Path(args.dataset).resolve()), "sha256": sha256_file(args.dataset)},
        "seed": args.seed,
        "encoder": encoder,
    }
    sidecar_path(args.index).write_text(json.dumps(side, sort_keys=True))
    print(json.dumps({"objects": index.num_objects, "keywords": index.num_keywords,
                      "longest_list": index.longest_list(), "bytes": index.nbytes()}))
    return EXIT_OK


# -- query -------------------------------------------------------------------

class Context:
    """A loaded index plus whatever its adapter needs to encode queries."""

    def __init__(self, index_path, adapter=None):
        side_p = sidecar_path(index_path)
        if not side_p.exists():
            raise DataFormatError(f"{side_p}: encoder sidecar missing")
        self.side = json.loads(side_p.read_text())
        if self.side.get("index_sha256") != sha256_file(index_path):
            raise DataFormatError(f"{index_path}: index does not match its encoder sidecar; refusing to run")
        if adapter and adapter != self.side["adapter"]:
            raise DataFormatError(f"index was built with adapter {self.side['adapter']}, not {adapter}")
        self.adapter = self.side["adapter"]
        t = time.perf_counter_ns()
        self.index = InvertedIndex.load(index_path)
        self.load_ns = time.perf_counter_ns() - t
        enc = self.side["encoder"]
        if self.adapter == "relational":
            self.schema = RelationalSchema.from_json(enc["schema"])
        elif self.adapter.startswith("vectors"):
            self.encoder = lsh.LshEncoder.from_json(json.dumps(enc["lsh"]))
        elif self.adapter == "sequences":
            ds = self.side["dataset"]
            if sha256_file(ds["path"]) != ds["sha256"]:
                raise DataFormatError(f"{ds['path']}: sequence file changed since the index was built")
            vocab = sa.GramVocabulary({g: tuple(v) for g, v in enc["grams"].items()})
            self.seq = sa.SequenceIndex(read_lines(ds["path"]), enc["n"], self.index, vocab)
        else:
            self.vocab = sa.Vocabulary({w: i for i, w in enumerate(enc["vocab"])})
            self.stopwords = enc["stopwords"]

    def encode(self, doc: dict, k: int) -> Query | None:
        qid, k = int(doc["id"]), int(doc.get("k", k))
        try:
            if self.adapter == "relational":
                return relational_query(doc, self.schema, k)
            if self.adapter.startswith("vectors"):
                return lsh.encode_query_point(self.encoder, np.asarray(doc["point"], np.float64), k, qid)
            if self.adapter == "sequences":
                return self.seq.query(doc["text"], k, qid)
            return sa.document_query(doc["text"], self.vocab, k, qid, self.stopwords)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"query on line {doc.get('_line', '?')}: {exc}") from None


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("MCX_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"MCX_WORKERS={env!r} is not an integer") from None
    return 1


def _run(ctx: Context, queries: list[Query], selector: str, workers: int, seed: int,
         partition_capacity: int | None):
    req = BatchRequest(queries, selector=selector, mode="parallel" if workers > 1 else "sequential",
                       workers=workers, shuffle_seed=seed)
    if partition_capacity:
        parts = partition_dataset(ctx.index.to_flat(), partition_capacity)
        return execute_partitioned(parts, req)
    return execute_batch(ctx.index, req)


def _empty(doc) -> dict:
    return {"query_id": int(doc["id"]), "topk": [], "threshold": 0}


def cmd_query(args) -> int:
    if not args.index or not args.queries:
        raise UsageError("query needs --index and --queries")
    ctx = Context(args.index, args.adapter)
    docs = read_json_lines(args.queries)
    workers = _workers(args)
    out = sys.stdout
    if ctx.adapter == "sequences":
        return _query_sequences(ctx, docs, args, workers, out)
    encoded = [ctx.encode(d, args.k) for d in docs]
    queries = [q for q in encoded if q is not None]
    res = _run(ctx, queries, args.selector, workers, args.seed, args.partition_capacity)
    if args.oracle:
        other = "sort" if args.selector != "sort" else "cpq"
        ref = _run(ctx, queries, other, 1, args.seed, None)
        for a, b in zip(res.results, ref.results):
            if a.to_json() != b.to_json():
                raise InvariantError(f"query {a.query_id}: {args.selector} and {other} disagree")
    by_id = iter(res.results)
    for d, q in zip(docs, encoded):
        out.write(json.dumps(next(by_id).to_json() if q is not None else _empty(d)) + "\n")
    _write_stats(args, res.timing, res.memory, ctx.load_ns)
    return EXIT_OK


def _query_sequences(ctx, docs, args, workers, out) -> int:
    texts = [d.get("text") for d in docs]
    if any(not isinstance(t, str) for t in texts):
        raise DataFormatError("sequence queries need a \"text\" string")
    t0 = time.perf_counter_ns()
    mode = "parallel" if workers > 1 else "sequential"
    outcomes = ctx.seq.search(texts, args.K, escalate=True, mode=mode, workers=workers,
                              shuffle_seed=args.seed) if texts else []
    for d, t, v in zip(docs, texts, outcomes):
        if args.oracle and ctx.seq.store.nearest(t)[1] != v.best_distance:
            raise InvariantError(f"query {d['id']}: verified distance differs from a full scan")
        out.write(json.dumps({"query_id": int(d["id"]), "nn": {"id": v.best_id, "distance": v.best_distance},
                              "certified": v.certified, "K_used": v.K_used}) + "\n")
    _write_stats(args, {"total": time.perf_counter_ns() - t0}, {}, ctx.load_ns)
    return EXIT_OK


def _write_stats(args, timing, memory, load_ns):
    if args.stats_out:
        Path(args.stats_out).write_text(json.dumps(
            {"load_ns": load_ns, "timing_ns": timing, "memory": memory}, sort_keys=True))


# -- estimate-m ----------------------------------------------------------------

def cmd_estimate_m(args) -> int:
    eps, delta = args.eps, args.delta
    if not (0 < eps < 1 and 0 < delta < 1):
        raise UsageError("--eps and --delta must lie in (0, 1)")
    print(f"closed-form m (Hoeffding): {lsh.required_m_hoeffding(eps, delta)}", file=sys.stderr)
    print("s,m_binomial")
    for i in range(1, 20):
        s = round(0.05 * i, 2)
        print(f"{s:.2f},{lsh.required_m_binomial(s, eps, delta)}")
    return EXIT_OK


# -- bench -------------------------------------------------------------------

def result_hash(results) -> str:
    blob = json.dumps([r.to_json() for r in results], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def cmd_bench(args) -> int:
    if not args.dataset or not args.adapter or not args.queries:
        raise UsageError("bench needs --dataset, --adapter and --queries")
    selectors = args.selector.split(",")
    workers_list = [int(w) for w in str(args.workers or _workers(args)).split(",")]
    rows: dict[tuple[str, int], list] = {}
    hashes: dict[tuple[str, int], set] = {}
    for _ in range(args.runs):
        t = time.perf_counter_ns()
        flat, index, encoder = _encode_dataset(args)
        if index is None:
            index = build_index(flat, args.split_threshold)
        build_ns = time.perf_counter_ns() - t
        buf = io.BytesIO()
        index.save(buf)
        t = time.perf_counter_ns()
        index = InvertedIndex.load(io.BytesIO(buf.getvalue()))
        load_ns = time.perf_counter_ns() - t
        ctx = _BenchContext(args, index, encoder)
        queries = [q for q in (ctx.encode(d, args.k) for d in read_json_lines(args.queries)) if q is not None]
        for sel in selectors:
            for w in workers_list:
                res = _run(ctx, queries, sel, w, args.seed, args.partition_capacity)
                tm = res.timing
                mem = res.memory.get("counter_bytes_per_query") or [0]
                rows.setdefault((sel, w), []).append(
                    [build_ns, load_ns, tm["lookup"], tm["match"], tm["select"], tm["merge"],
                     build_ns + load_ns + tm["total"], float(np.mean(mem))])
                hashes.setdefault((sel, w), set()).add(result_hash(res.results))
    cols = ["selector", "workers", "runs", "build_ns", "load_ns", "lookup_ns", "match_ns",
            "select_ns", "merge_ns", "total_ns", "counter_bytes_per_query", "result_hash"]
    print(",".join(cols))
    for (sel, w), vals in rows.items():
        if len(hashes[(sel, w)]) != 1:
            raise InvariantError(f"selector {sel} with {w} workers is not deterministic across runs")
        mean = np.mean(np.array(vals, dtype=np.float64), axis=0)
        nums = [str(int(round(v))) for v in mean[:-1]] + [f"{mean[-1]:.1f}"]
        print(",".join([sel, str(w), str(args.runs)] + nums + [next(iter(hashes[(sel, w)]))]))
    return EXIT_OK


class _BenchContext(Context):
    """Context over an in-memory index, skipping the sidecar checks."""

    def __init__(self, args, index, encoder):
        self.adapter, self.index, self.load_ns = args.adapter, index, 0
        if self.adapter == "relational":
            self.schema = RelationalSchema.from_json(encoder["schema"])
        elif self.adapter.startswith("vectors"):
            self.encoder = lsh.LshEncoder.from_json(json.dumps(encoder["lsh"]))
        elif self.adapter == "sequences":
            vocab = sa.GramVocabulary({g: tuple(v) for g, v in encoder["grams"].items()})
            self.seq = sa.SequenceIndex(read_lines(args.dataset), encoder["n"], index, vocab)
        else:
            self.vocab = sa.Vocabulary({w: i for i, w in enumerate(encoder["vocab"])})
            self.stopwords = encoder["stopwords"]


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcx", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--dataset")
        sp.add_argument("--format", choices=sorted(set(FORMATS.values())))
        sp.add_argument("--adapter", choices=ADAPTERS)
        sp.add_argument("--index")
        sp.add_argument("--queries")
        sp.add_argument("--k", type=int, default=1)
        sp.add_argument("--selector", default="cpq")
        sp.add_argument("--workers")
        sp.add_argument("--partition-capacity", type=int)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--oracle", action="store_true")
        sp.add_argument("--stats-out")
        sp.add_argument("--schema", help="JSON schema sidecar for relational CSV")
        sp.add_argument("--split-threshold", type=int)
        sp.add_argument("--m", type=int, default=lsh.DEFAULT_M)
        sp.add_argument("--eps", type=float, default=lsh.DEFAULT_EPS)
        sp.add_argument("--delta", type=float, default=lsh.DEFAULT_DELTA)
        sp.add_argument("--D", type=int)
        sp.add_argument("--w", type=float, default=lsh.DEFAULT_W)
        sp.add_argument("--buckets", type=int, default=lsh.DEFAULT_BUCKETS)
        sp.add_argument("--sigma", type=float)
        sp.add_argument("--n", type=int, default=sa.DEFAULT_N)
        sp.add_argument("--K", type=int, default=sa.DEFAULT_K)
        sp.add_argument("--stopwords")
        sp.add_argument("--runs", type=int, default=10)

    for name, fn in (("build", cmd_build), ("query", cmd_query),
                     ("estimate-m", cmd_estimate_m), ("bench", cmd_bench)):
        sp = sub.add_parser(name)
        common(sp)
        sp.set_defaults(func=fn)
    return p


def _validate(args):
    if args.command == "query" and args.selector not in ("cpq", "bucket", "sort"):
        raise UsageError(f"unknown selector {args.selector!r}")
    if args.command == "bench":
        for s in args.selector.split(","):
            if s not in ("cpq", "bucket", "sort"):
                raise UsageError(f"unknown selector {s!r}")
    if args.workers is not None:
        try:
            ws = [int(w) for w in str(args.workers).split(",")]
        except ValueError:
            raise UsageError(f"--workers {args.workers!r} is not an integer list") from None
        if any(w < 1 for w in ws) or (args.command != "bench" and len(ws) != 1):
            raise UsageError("--workers must be a positive integer")
        if args.command != "bench":
            args.workers = ws[0]
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    if args.partition_capacity is not None and args.partition_capacity < 1:
        raise UsageError("--partition-capacity must be >= 1")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _validate(args)
        return args.func(args)
    except UsageError as exc:
        print(f"mcx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantError, ContractViolation, EngineError) as exc:
        print(f"mcx: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (MatchCountError, OSError, ValueError) as exc:
        print(f"mcx: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
