"""
Word overlap between short documents
====================================

Each distinct word is a keyword, so the match count of a query document is
the size of the word intersection.
"""

from matchcount import BatchRequest, FlatKeywords, build_index, execute_batch
from matchcount import sa

docs = [
    "the cat sat on the mat",
    "a dog chased the cat",
    "dogs and cats living together",
    "the mat was red",
    "a red dog sat",
]
stop = {"the", "a", "on", "and", "was"}
vocab = sa.Vocabulary()
records = [sa.decompose_document(d, vocab, i, stop) for i, d in enumerate(docs)]
index = build_index(FlatKeywords.from_records(records))

q = sa.document_query("red cat on a mat", vocab, k=3, stopwords=stop)
for oid, count in execute_batch(index, BatchRequest([q])).results[0].entries:
    print(count, docs[oid])
