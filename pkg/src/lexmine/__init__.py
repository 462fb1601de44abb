"""Self-supervised training-data mining for dense retrieval.

A BM25 sparse retriever and a trainable dual-encoder dense retriever are
combined to mine positive/hard-negative pairs from unlabeled queries, augmented
with filtered generated queries, and iterated mine -> train -> refresh.
"""

__version__ = "0.1.0"
