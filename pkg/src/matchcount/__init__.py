"""Exact top-k match-count search over inverted indexes.

Objects are sets of ``(dim, token)`` keywords, queries are lists of range
items, and the score of an object is the number of its keywords that fall in
the query's ranges. The c-PQ counter structure returns the k best objects
with a single pass over the matched postings. LSH and n-gram adapters reduce
vector and sequence similarity search to the same model.
"""
from .cpq import CountPriorityQueue, TopKResult
from .engine import BatchRequest, BatchResult, execute_batch, execute_partitioned, merge_topk
from .errors import MatchCountError
from .index import InvertedIndex, build_index, partition_dataset
from .model import FlatKeywords, Keyword, ObjectRecord, Query, QueryItem, Schema

__all__ = [
    "BatchRequest", "BatchResult", "CountPriorityQueue", "FlatKeywords", "InvertedIndex",
    "Keyword", "MatchCountError", "ObjectRecord", "Query", "QueryItem", "Schema", "TopKResult",
    "build_index", "execute_batch", "execute_partitioned", "merge_topk", "partition_dataset",
]
__version__ = "0.1.0"
