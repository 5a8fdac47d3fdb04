"""
Nearest sequence under edit distance
====================================

Sequences are split into ordered 3-grams. Candidates with many shared
grams are verified with exact edit distance, and a count bound decides
whether the answer is certified.
"""

import random

from matchcount import sa

rng = random.Random(0)
letters = "abcdefghijklmnopqrstuvwxyz"
texts = ["".join(rng.choice(letters) for _ in range(40)) for _ in range(20_000)]


def mutate(s, edits):
    s = list(s)
    for _ in range(edits):
        i = rng.randrange(len(s))
        s[i] = rng.choice(letters)
    return "".join(s)


print(sa.decompose_sequence("aabaab", 3))

index = sa.SequenceIndex(texts, n=3)
queries = [mutate(texts[i], 8) for i in range(0, 2000, 20)]
out = index.search(queries, K=32)

###############################################################################
# Compare with a full scan.
right = sum(v.best_distance == index.store.nearest(q)[1] for q, v in zip(queries, out))
print(f"correct {right}/{len(queries)}, certified {sum(v.certified for v in out)}")
print("escalations:", sorted({v.K_used for v in out}))
print("edit-distance calls per query:", sum(v.ed_calls for v in out) / len(out))
