"""
Approximate nearest neighbours with random binning
==================================================

Points are hashed by m randomly shifted grids. Two points share a grid cell
with probability equal to a Laplacian kernel, so the number of shared cells
is an estimate of similarity and the top match count is an approximate
nearest neighbour.
"""

import numpy as np

from matchcount import BatchRequest, build_index, execute_batch
from matchcount import lsh

rng = np.random.default_rng(1)
X = rng.normal(size=(3000, 16))
queries = rng.normal(size=(100, 16))

sigma = lsh.kernel_width_heuristic(X)
m = lsh.required_m_binomial(0.5)
print(f"sigma={sigma:.2f}  m={m}  (Hoeffding would ask for {lsh.required_m_hoeffding(0.06, 0.06)})")

enc = lsh.LshEncoder.rbh(16, sigma, m, seed=0)
index = build_index(enc.encode_dataset(X))

###############################################################################
# Query and compare against the exact kernel ranking.
batch = [lsh.encode_query_point(enc, q, k=5, id=i) for i, q in enumerate(queries)]
res = execute_batch(index, BatchRequest(batch))

gaps = []
for q, r in zip(queries, res.results):
    sim = np.exp(-np.abs(X - q).sum(axis=1) / sigma)
    top_id, count = r.entries[0]
    gaps.append(sim.max() - sim[top_id])
print("estimated vs true similarity of first hit:",
      lsh.estimate_similarity(res.results[0].entries[0][1], m),
      np.exp(-np.abs(X[res.results[0].entries[0][0]] - queries[0]).sum() / sigma))
print("similarity gap: median %.4f, 95th pct %.4f" % (np.median(gaps), np.percentile(gaps, 95)))

###############################################################################
# Approximation ratio of the l1 distances of the returned five.
ratios = []
for q, r in zip(queries, res.results):
    d = np.abs(X - q).sum(axis=1)
    ids = [i for i, _ in r.entries]
    reported = X[ids][np.argsort(d[ids])]
    truth = X[np.argsort(d)[:len(ids)]]
    ratios.append(lsh.approximation_ratio(reported, truth, q, p_norm=1))
print("mean approximation ratio:", np.mean(ratios))
