"""Feature extractor for the IHS engine.

Produces the engine's inputs offline: pooled text embeddings under the
shared instruction template, 7-class emotion probability vectors, and
optional LLM-generated context passages. Communicates with the engine only
through the shared file formats (sample JSONL in, EMBC caches out).
"""

__version__ = "0.1.0"
