"""Embedding cache: instruction template, token pooling, EMBC file format.

The cache is bit-exact and little-endian: magic "EMBC", format version u32,
header-length u32, a UTF-8 JSON header, then one record per sample
(id-length u16, id bytes, dim float32 values). The SHA-256 of the exact
instruction prefix is stamped into every cache header so training runs can
refuse mismatched features.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    CacheCorruptionError,
    CacheFormatError,
    EmbeddingLookupError,
    ShapeError,
    ValidationError,
    ZeroNormError,
)

# Exact prefix prepended to every classified text. A single space follows
# the colon; the digest below pins the choice.
INSTRUCTION_PREFIX = "Instruct: classify the following in no hate or hate.\nQuery: "

INSTRUCTION_DIGEST = hashlib.sha256(INSTRUCTION_PREFIX.encode("utf-8")).digest()

# Digest stamped on caches produced without any instruction (emotion role).
NO_INSTRUCTION_DIGEST = hashlib.sha256(b"").digest()

MAGIC = b"EMBC"
FORMAT_VERSION = 1

EMOTION_CLASSES = ("fear", "disgust", "surprise", "anger", "sadness", "joy", "other")


class Pooling(str, Enum):
    NORMALIZED_SUM = "normalized_sum"
    MEAN_PASSTHROUGH = "mean_passthrough"
    NONE = "none"


def build_instruction_text(raw_text: str) -> str:
    """Prepend the instruction prefix; no other normalization."""
    if not raw_text:
        raise ValidationError("cannot build instruction text from an empty string")
    return INSTRUCTION_PREFIX + raw_text


def pool_tokens(token_matrix, method: Pooling) -> np.ndarray:
    """Reduce a k x n token matrix to one n-vector.

    NORMALIZED_SUM sums over tokens and scales to unit Euclidean norm;
    MEAN_PASSTHROUGH takes the column-wise mean; NONE requires a single row
    and returns it unchanged.
    """
    mat = np.asarray(token_matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ShapeError(f"expected a k x n matrix with k >= 1, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValidationError("token matrix contains non-finite values")
    if method == Pooling.NONE:
        if mat.shape[0] != 1:
            raise ShapeError(f"pooling 'none' requires exactly one token row, got {mat.shape[0]}")
        return mat[0].copy()
    if method == Pooling.MEAN_PASSTHROUGH:
        return mat.mean(axis=0)
    summed = mat.sum(axis=0)
    norm = float(np.linalg.norm(summed))
    if norm == 0.0:
        raise ZeroNormError("token sum has zero norm; cannot normalize")
    return summed / norm


@dataclass
class EmbeddingStore:
    """Immutable map from sample id to a fixed-dimension float32 vector."""

    model_id: str
    pooling: Pooling
    dim: int
    instruction_digest: bytes
    records: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValidationError(f"store dimension must be positive, got {self.dim}")
        if len(self.instruction_digest) != 32:
            raise ValidationError("instruction digest must be 32 bytes")
        for sid, vec in self.records.items():
            self.records[sid] = self._check_vector(sid, vec)

    def _check_vector(self, sid: str, vec) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float32)
        if arr.shape != (self.dim,):
            raise ShapeError(
                f"record {sid!r} has shape {arr.shape}, store dimension is {self.dim}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"record {sid!r} contains non-finite values")
        return arr

    def __len__(self) -> int:
        return len(self.records)

    def add(self, sample_id: str, vector) -> None:
        if sample_id in self.records:
            raise ValidationError(f"duplicate sample id {sample_id!r} in store")
        self.records[sample_id] = self._check_vector(sample_id, vector)

    def lookup(self, sample_id: str) -> np.ndarray:
        try:
            return self.records[sample_id]
        except KeyError:
            raise EmbeddingLookupError(
                f"sample id {sample_id!r} not present in store for model {self.model_id!r}"
            ) from None

    def metadata(self) -> dict:
        return {
            "model_id": self.model_id,
            "pooling": self.pooling.value,
            "instruction_sha256": self.instruction_digest.hex(),
        }


def write_cache(store: EmbeddingStore, path: str | Path) -> None:
    """Serialize bit-exactly; on failure no partial file is left behind."""
    path = Path(path)
    header = {
        "model_id": store.model_id,
        "pooling": store.pooling.value,
        "dim": store.dim,
        "count": len(store.records),
        "instruction_sha256": store.instruction_digest.hex(),
    }
    header_bytes = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            for sid, vec in store.records.items():
                sid_bytes = sid.encode("utf-8")
                if len(sid_bytes) > 0xFFFF:
                    raise ValidationError(f"sample id too long for cache format: {sid[:40]!r}...")
                fh.write(struct.pack("<H", len(sid_bytes)))
                fh.write(sid_bytes)
                fh.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _read_exact(fh, n: int, what: str):
    data = fh.read(n)
    if len(data) != n:
        raise CacheCorruptionError(f"truncated cache while reading {what}")
    return data


def read_cache(path: str | Path) -> EmbeddingStore:
    """Parse and validate a cache file written by write_cache."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CacheFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CacheFormatError(f"{path}: unsupported format version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CacheCorruptionError(f"{path}: unreadable header ({exc})") from exc
        for key in ("model_id", "pooling", "dim", "count", "instruction_sha256"):
            if key not in header:
                raise CacheCorruptionError(f"{path}: header missing field {key!r}")
        try:
            pooling = Pooling(header["pooling"])
        except ValueError:
            raise CacheCorruptionError(
                f"{path}: unknown pooling {header['pooling']!r}"
            ) from None
        dim = int(header["dim"])
        count = int(header["count"])
        digest = bytes.fromhex(header["instruction_sha256"])

        records: dict[str, np.ndarray] = {}
        for index in range(count):
            try:
                (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"record {index} id length"))
                sid = _read_exact(fh, id_len, f"record {index} id").decode("utf-8")
                raw = _read_exact(fh, 4 * dim, f"record {index} ({sid!r}) vector")
            except CacheCorruptionError as exc:
                raise CacheCorruptionError(f"{path}: record {index}: {exc}") from None
            vec = np.frombuffer(raw, dtype="<f4").copy()
            if sid in records:
                raise CacheCorruptionError(f"{path}: record {index}: duplicate id {sid!r}")
            if not np.all(np.isfinite(vec)):
                raise CacheCorruptionError(f"{path}: record {index} ({sid!r}): non-finite values")
            records[sid] = vec
        if fh.read(1):
            raise CacheCorruptionError(f"{path}: trailing bytes after {count} records")
    return EmbeddingStore(
        model_id=header["model_id"],
        pooling=pooling,
        dim=dim,
        instruction_digest=digest,
        records=records,
    )


@dataclass(frozen=True)
class FeatureBundle:
    """Per-sample features: tweet vector, optional context and emotion."""

    tweet: np.ndarray
    context: np.ndarray | None = None
    emotion: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "tweet", np.asarray(self.tweet, dtype=np.float64))
        if self.context is not None:
            object.__setattr__(self, "context", np.asarray(self.context, dtype=np.float64))
        if self.emotion is not None:
            emo = np.asarray(self.emotion, dtype=np.float64)
            if emo.shape != (len(EMOTION_CLASSES),):
                raise ShapeError(
                    f"emotion vector must have {len(EMOTION_CLASSES)} entries, got {emo.shape}"
                )
            if np.any(emo < 0) or abs(float(emo.sum()) - 1.0) > 1e-5:
                raise ValidationError(
                    "emotion vector must be nonnegative and sum to 1 within 1e-5"
                )
            object.__setattr__(self, "emotion", emo)


def load_stores(paths: Mapping[str, str | Path]) -> dict[str, EmbeddingStore]:
    """Load role-keyed stores (roles: tweet, context, emotion)."""
    return {role: read_cache(p) for role, p in paths.items()}
