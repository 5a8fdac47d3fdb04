"""
Querying a dataset in parts
===========================

When the index does not fit at once, split the objects into consecutive
ranges, query every part and merge the per-part top-k lists.
"""

import numpy as np

from matchcount import BatchRequest, Query, QueryItem, execute_batch, execute_partitioned
from matchcount import build_index, partition_dataset
from matchcount.model import FlatKeywords

rng = np.random.default_rng(2)
flat = FlatKeywords.from_token_matrix(rng.integers(0, 30, (50_000, 8)))
queries = [Query(i, [QueryItem(d, lo, lo + 3) for d, lo in enumerate(rng.integers(0, 27, 8))], k=20)
           for i in range(40)]

whole = execute_batch(build_index(flat), BatchRequest(queries))
for capacity in (25_000, 8_000, 1_000):
    parts = partition_dataset(flat, capacity)
    got = execute_partitioned(parts, BatchRequest(queries))
    same = [a.to_json() for a in got.results] == [b.to_json() for b in whole.results]
    print(f"{len(parts):3d} parts, identical to single index: {same}")
