"""Readers and writers for the on-disk dataset and query formats.

* vectors: little-endian records of ``u32 dim`` followed by ``dim`` float32
* relational: CSV with a header row, plus an optional JSON schema sidecar
  giving each attribute's kind (``categorical`` or ``numeric``) and, for
  numeric columns, the bin count and value range used to discretize them
* sequences and documents: UTF-8, one record per line
* queries: JSON lines
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .model import FlatKeywords, Query, QueryItem, Schema, equal_width_bins

DEFAULT_BINS = 1024


# -- vectors -----------------------------------------------------------------

def write_vectors(path, X) -> None:
    X = np.ascontiguousarray(X, dtype="<f4")
    n, d = X.shape
    rec = np.empty((n, d + 1), dtype="<u4")
    rec[:, 0] = d
    rec[:, 1:] = X.view("<u4")
    rec.tofile(path)


def read_vectors(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<u4")
    if raw.size == 0:
        return np.zeros((0, 0), dtype=np.float32)
    d = int(raw[0])
    if d == 0:
        raise DataFormatError(f"{path}: record 1 has dimension 0")
    if raw.size % (d + 1) == 0:
        rec = raw.reshape(-1, d + 1)
        bad = np.flatnonzero(rec[:, 0] != d)
        if bad.size == 0:
            return rec[:, 1:].copy().view("<f4").astype(np.float32)
        raise DataFormatError(f"{path}: record {bad[0] + 1} has dimension {rec[bad[0], 0]}, expected {d}")
    raise DataFormatError(f"{path}: file size is not a whole number of {d}-dim records")


# -- relational ----------------------------------------------------------------

@dataclass
class Attribute:
    name: str
    kind: str = "categorical"
    values: list[str] | None = None
    domain: int | None = None
    bins: int = DEFAULT_BINS
    lo: float | None = None
    hi: float | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "numeric":
            d.update(bins=self.bins, lo=self.lo, hi=self.hi)
        elif self.values is not None:
            d["values"] = self.values
        else:
            d["domain"] = self.domain
        return d

    @property
    def size(self) -> int:
        if self.kind == "numeric":
            return self.bins
        return len(self.values) if self.values is not None else int(self.domain)

    def token(self, raw) -> int:
        """Token of one raw value (string or number)."""
        if self.kind == "numeric":
            return int(equal_width_bins(np.array([float(raw)]), self.bins, self.lo, self.hi)[0])
        if self.values is not None:
            return self.values.index(str(raw))
        return int(raw)


@dataclass
class RelationalSchema:
    attributes: list[Attribute] = field(default_factory=list)

    def to_schema(self) -> Schema:
        return Schema(tuple(a.size for a in self.attributes), tuple(a.name for a in self.attributes))

    def to_json(self) -> dict:
        return {"attributes": [a.to_dict() for a in self.attributes]}

    @classmethod
    def from_json(cls, doc: dict) -> "RelationalSchema":
        return cls([Attribute(**a) for a in doc["attributes"]])

    def index_of(self, name) -> int:
        if isinstance(name, int):
            return name
        for j, a in enumerate(self.attributes):
            if a.name == name:
                return j
        raise DataFormatError(f"unknown attribute {name!r}")


def _is_int(s: str) -> bool:
    try:
        return int(s) >= 0
    except ValueError:
        return False


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_relational(path, schema_path=None) -> tuple[FlatKeywords, RelationalSchema]:
    """Parse a CSV into keywords; a missing schema is inferred from the data.

    Inference: a column of non-negative integers is categorical with domain
    ``max + 1``; any other all-numeric column is numeric with 1024 bins; the
    rest are categorical over their sorted distinct strings.
    """
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DataFormatError(f"{path}: no records")
    header, body = rows[0], rows[1:]
    if not body:
        raise DataFormatError(f"{path}: no records")
    for ln, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataFormatError(f"{path}:{ln}: expected {len(header)} fields, got {len(r)}")
    cols = list(zip(*body))
    if schema_path is not None:
        schema = RelationalSchema.from_json(json.loads(Path(schema_path).read_text()))
        if len(schema.attributes) != len(header):
            raise DataFormatError(f"{schema_path}: {len(schema.attributes)} attributes, CSV has {len(header)}")
    else:
        schema = RelationalSchema([Attribute(h) for h in header])
    for a, col in zip(schema.attributes, cols):
        if a.kind == "numeric":
            bad = [i for i, v in enumerate(col) if not _is_float(v)]
            if bad:
                raise DataFormatError(f"{path}:{bad[0] + 2}: {a.name}: not a number: {col[bad[0]]!r}")
            vals = np.array(col, dtype=np.float64)
            a.lo = float(vals.min()) if a.lo is None else a.lo
            a.hi = float(vals.max()) if a.hi is None else a.hi
        elif a.values is None and a.domain is None:
            if all(_is_int(v) for v in col):
                a.domain = max(int(v) for v in col) + 1
            elif schema_path is None and all(_is_float(v) for v in col):
                vals = np.array(col, dtype=np.float64)
                a.kind, a.lo, a.hi = "numeric", float(vals.min()), float(vals.max())
            else:
                a.values = sorted(set(col))
    n = len(body)
    tokens = np.empty((n, len(header)), dtype=np.int64)
    for j, (a, col) in enumerate(zip(schema.attributes, cols)):
        if a.kind == "numeric":
            tokens[:, j] = equal_width_bins(np.array(col, dtype=np.float64), a.bins, a.lo, a.hi)
            continue
        for i, v in enumerate(col):
            try:
                t = a.token(v)
            except ValueError:
                raise DataFormatError(f"{path}:{i + 2}: {a.name}: bad value {v!r}") from None
            if not 0 <= t < a.size:
                raise DataFormatError(f"{path}:{i + 2}: {a.name}: value {v!r} outside domain")
            tokens[i, j] = t
    return FlatKeywords.from_token_matrix(tokens), schema


def relational_query(doc: dict, schema: RelationalSchema, default_k: int) -> Query:
    """``{"id", "k", "ranges": [[attr, lo, hi], ...]}`` with raw attribute values."""
    items = []
    for attr, lo, hi in doc["ranges"]:
        j = schema.index_of(attr)
        a = schema.attributes[j]
        tlo, thi = max(a.token(lo), 0), min(a.token(hi), a.size - 1)
        if tlo <= thi:
            items.append(QueryItem(j, tlo, thi))
    if not items:
        raise DataFormatError(f"query {doc.get('id')}: every range is empty")
    return Query(int(doc.get("id", 0)), items, int(doc.get("k", default_k)))


# -- text and queries ----------------------------------------------------------

def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\r\n") for line in f]


def read_json_lines(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{ln}: {exc.msg}") from None
            if not isinstance(doc, dict):
                raise DataFormatError(f"{path}:{ln}: expected a JSON object")
            doc.setdefault("id", len(out))
            doc["_line"] = ln
            out.append(doc)
    return out
