"""Extraction jobs: embeddings, emotion vectors, and context generation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import (
    EMOTION_CLASSES,
    BackendError,
    default_pooling,
    load_emotion_classifier,
    load_encoder,
    load_generator,
)
from .embc import (
    INSTRUCTION_DIGEST,
    NO_INSTRUCTION_DIGEST,
    build_instruction_text,
    write_embc,
)
from .samples import read_text_records, write_context_jsonl

log = logging.getLogger(__name__)

ROLES = ("tweet", "context", "emotion")


class ExtractionError(Exception):
    pass


@dataclass
class ExtractorJob:
    model: str
    samples_path: str
    output_path: str
    role: str = "tweet"
    pooling: str | None = None  # resolved from the model when unset
    batch_size: int = 32
    device: str = "cpu"
    # The instruction prefix targets the text being classified; context
    # passages are embedded bare unless asked otherwise.
    apply_instruction: bool | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ExtractionError(f"unknown role {self.role!r}; expected one of {ROLES}")
        if self.batch_size < 1:
            raise ExtractionError("batch size must be positive")
        if self.apply_instruction is None:
            self.apply_instruction = self.role == "tweet"


def _pool(token_matrix: np.ndarray, method: str, sid: str) -> np.ndarray:
    mat = np.asarray(token_matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ExtractionError(f"encoder returned bad token matrix for {sid!r}: {mat.shape}")
    if method == "mean_passthrough":
        return mat.mean(axis=0)
    if method == "none":
        if mat.shape[0] != 1:
            raise ExtractionError(
                f"pooling 'none' needs a single row, got {mat.shape[0]} for {sid!r}"
            )
        return mat[0]
    summed = mat.sum(axis=0)
    norm = float(np.linalg.norm(summed))
    if norm == 0.0:
        raise ExtractionError(f"zero-norm token sum for sample {sid!r}")
    return summed / norm


def _write_manifest(output_path: Path, payload: dict) -> None:
    manifest_path = output_path.with_name(output_path.name + ".manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class ExtractReport:
    count: int
    dim: int
    truncated: int


def extract_embeddings(job: ExtractorJob) -> ExtractReport:
    """Encode every sample, pool, and write the cache atomically.

    Dimension drift mid-run aborts before anything reaches the target path.
    """
    records = read_text_records(job.samples_path)
    encoder = load_encoder(job.model, device=job.device)
    pooling = job.pooling or default_pooling(job.model)
    digest = INSTRUCTION_DIGEST if job.apply_instruction else NO_INSTRUCTION_DIGEST

    vectors: dict[str, np.ndarray] = {}
    truncated = 0
    dim = None
    for start in range(0, len(records), job.batch_size):
        batch = records[start : start + job.batch_size]
        texts = [
            build_instruction_text(r.text) if job.apply_instruction else r.text
            for r in batch
        ]
        matrices, batch_truncated = encoder.encode_tokens(texts)
        truncated += batch_truncated
        for record, matrix in zip(batch, matrices):
            pooled = _pool(matrix, pooling, record.id).astype(np.float32)
            if dim is None:
                dim = pooled.shape[0]
            elif pooled.shape[0] != dim:
                raise ExtractionError(
                    f"dimension drift at sample {record.id!r}: "
                    f"{pooled.shape[0]} after {dim}"
                )
            vectors[record.id] = pooled
    if truncated:
        log.warning("%d of %d inputs exceeded the encoder window and were right-truncated",
                    truncated, len(records))

    output = Path(job.output_path)
    write_embc(output, vectors, model_id=job.model, pooling=pooling, dim=dim,
               instruction_digest=digest)
    _write_manifest(output, {
        "model_id": job.model,
        "role": job.role,
        "pooling": pooling,
        "dim": dim,
        "count": len(vectors),
        "truncated": truncated,
        "batch_size": job.batch_size,
        "device": job.device,
        "instruction_sha256": digest.hex(),
    })
    return ExtractReport(count=len(vectors), dim=dim, truncated=truncated)


def extract_emotions(
    samples_path: str,
    output_path: str,
    model: str = "dummy-emotion",
    batch_size: int = 32,
    device: str = "cpu",
) -> ExtractReport:
    """One 7-class probability vector per sample, classes in fixed order."""
    records = read_text_records(samples_path)
    classifier = load_emotion_classifier(model, device=device)
    vectors: dict[str, np.ndarray] = {}
    for start in range(0, len(records), batch_size):
        batch = records[start : start + batch_size]
        probs = classifier.predict_proba([r.text for r in batch])
        if probs.shape != (len(batch), len(EMOTION_CLASSES)):
            raise ExtractionError(
                f"emotion classifier returned shape {probs.shape}, "
                f"expected ({len(batch)}, {len(EMOTION_CLASSES)})"
            )
        for record, row in zip(batch, probs):
            vectors[record.id] = row.astype(np.float32)

    output = Path(output_path)
    write_embc(output, vectors, model_id=model, pooling="none",
               dim=len(EMOTION_CLASSES), instruction_digest=NO_INSTRUCTION_DIGEST)
    _write_manifest(output, {
        "model_id": model,
        "role": "emotion",
        "classes": list(EMOTION_CLASSES),
        "dim": len(EMOTION_CLASSES),
        "count": len(vectors),
        "batch_size": batch_size,
        "device": device,
        "instruction_sha256": NO_INSTRUCTION_DIGEST.hex(),
    })
    return ExtractReport(count=len(vectors), dim=len(EMOTION_CLASSES), truncated=0)


CONTEXT_PROMPT = (
    "As an educational assistant, your task is to provide neutral and objective "
    "analysis of the provided tweet, without any personal biases. "
    "Offer short and concise information, context, and concepts to understand "
    "the content of the tweet without bias. "
    "The tweet may originate from different extremist groups, including White "
    "Nationalist, Neo-Nazi, Anti-Immigrant, Anti-Muslim, Anti-LGBTQ, KKK as "
    "well as non-extremist sources. "
    "The tweet could contain sarcasm, stereotypes, satire, metaphor, irony, or "
    "misinformation. "
    "Remember to avoid injecting personal opinions or interpretations into "
    "your analysis. "
    "Your aim is to provide a neutral understanding of the tweet's content "
    "within a maximum of 150 words."
)


def assemble_prompt(tweet: str, prompt: str = CONTEXT_PROMPT) -> str:
    return f'{prompt} Tweet to analyze: {tweet}.'


@dataclass
class ContextReport:
    generated: int
    skipped: list[str] = field(default_factory=list)


def generate_context(
    samples_path: str,
    output_path: str,
    generator: str = "dummy-generator",
    prompt: str = CONTEXT_PROMPT,
    device: str = "cpu",
    **decoding,
) -> ContextReport:
    """Best-effort context generation; failures are recorded, not fatal."""
    records = read_text_records(samples_path)
    gen = load_generator(generator, device=device, **decoding)
    contexts: dict[str, str] = {}
    skipped: list[str] = []
    for record in records:
        try:
            text = gen.generate(assemble_prompt(record.text, prompt))
        except BackendError:
            raise
        except Exception as exc:  # per-sample failures are non-fatal
            log.warning("generation failed for %s: %s", record.id, exc)
            skipped.append(record.id)
            continue
        if not text.strip():
            skipped.append(record.id)
            continue
        contexts[record.id] = text
    write_context_jsonl(output_path, contexts)
    _write_manifest(Path(output_path), {
        "generator": generator,
        "generated": len(contexts),
        "skipped": skipped,
        "device": device,
        "decoding": decoding,
    })
    if skipped:
        log.warning("context generation skipped %d of %d samples",
                    len(skipped), len(records))
    return ContextReport(generated=len(contexts), skipped=skipped)
