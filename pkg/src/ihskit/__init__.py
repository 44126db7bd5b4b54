"""Training and evaluation engine for implicit hate speech classifiers.

Operates on cached encoder embeddings: dataset ingestion with per-corpus
label rules, a binary embedding cache (EMBC), a small float64 neural kernel
(dense layers, attention, AdamW, warmup/decay schedule), five classifier
architectures, the multi-seed train/select/evaluate protocol, and error and
target-bias analyses.
"""

__version__ = "0.1.0"
