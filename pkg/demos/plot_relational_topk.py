"""
Top-k tuples by match count
===========================

Three tuples over attributes A, B and C. A query asks for a range on each
attribute and scores a tuple by how many of its values fall inside.
"""

import numpy as np

from matchcount import BatchRequest, ObjectRecord, Query, QueryItem, build_index, execute_batch
from matchcount.select import full_scan_counts

# Each keyword is (attribute, value).
objects = [
    ObjectRecord(0, [(0, 1), (1, 2), (2, 1)]),
    ObjectRecord(1, [(0, 2), (1, 1), (2, 2)]),
    ObjectRecord(2, [(0, 1), (1, 2), (2, 2)]),
]
index = build_index(objects)
print("keywords:", index.num_keywords, "longest list:", index.longest_list())

# A in [1, 2], B = 1, C in [2, 3]
q = Query(0, [QueryItem(0, 1, 2), QueryItem(1, 1, 1), QueryItem(2, 2, 3)], k=1)
print("brute-force counts:", full_scan_counts(q, objects))

###############################################################################
# The count priority queue returns the winner and the k-th count.
res = execute_batch(index, BatchRequest([q]))
print(res.results[0].to_json())

cpq = res.queues[0]
print("audit threshold:", cpq.audit_threshold)
print("zipper array:", cpq.gate.zipper_array)

###############################################################################
# A larger random table, checked against a sort of the full count array.
rng = np.random.default_rng(0)
rows = rng.integers(0, 50, (20_000, 6))
from matchcount.model import FlatKeywords
from matchcount.select import sort_topk

flat = FlatKeywords.from_token_matrix(rows)
index = build_index(flat)
queries = [Query(i, [QueryItem(d, lo, lo + 5) for d, lo in enumerate(rng.integers(0, 45, 6))], k=10)
           for i in range(50)]
res = execute_batch(index, BatchRequest(queries, mode="parallel", workers=4))
same = all(r.entries == [e for e in sort_topk(full_scan_counts(q, flat), 10) if e[1] > 0]
           for q, r in zip(queries, res.results))
print("parallel c-PQ agrees with sorting:", same)
print({k: v / 1e6 for k, v in res.timing.items()}, "ms")
