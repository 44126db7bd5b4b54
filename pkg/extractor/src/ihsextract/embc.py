"""Writer for the EMBC cache format shared with the training engine.

Layout (little-endian): magic "EMBC", format version u32 = 1, header-length
u32, UTF-8 JSON header {"model_id", "pooling", "dim", "count",
"instruction_sha256"}, then per record: id-length u16, id bytes, `dim`
float32 values. The engine's reader is the conformance oracle for this
writer.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMBC"
FORMAT_VERSION = 1

# Exact template prepended to classified texts; byte-identical with the
# engine's copy (the conformance suite pins the digest).
INSTRUCTION_PREFIX = "Instruct: classify the following in no hate or hate.\nQuery: "
INSTRUCTION_DIGEST = hashlib.sha256(INSTRUCTION_PREFIX.encode("utf-8")).digest()
NO_INSTRUCTION_DIGEST = hashlib.sha256(b"").digest()

POOLINGS = ("normalized_sum", "mean_passthrough", "none")


class CacheWriteError(Exception):
    pass


def build_instruction_text(raw_text: str) -> str:
    if not raw_text:
        raise CacheWriteError("cannot build instruction text from an empty string")
    return INSTRUCTION_PREFIX + raw_text


def write_embc(
    path: str | Path,
    records: dict[str, np.ndarray],
    model_id: str,
    pooling: str,
    dim: int,
    instruction_digest: bytes,
) -> None:
    """Serialize id->vector records; the target file appears atomically."""
    if pooling not in POOLINGS:
        raise CacheWriteError(f"unknown pooling {pooling!r}; expected one of {POOLINGS}")
    if len(instruction_digest) != 32:
        raise CacheWriteError("instruction digest must be 32 bytes")
    path = Path(path)
    header = {
        "model_id": model_id,
        "pooling": pooling,
        "dim": dim,
        "count": len(records),
        "instruction_sha256": instruction_digest.hex(),
    }
    header_bytes = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            for sid, vec in records.items():
                arr = np.asarray(vec, dtype="<f4")
                if arr.shape != (dim,):
                    raise CacheWriteError(
                        f"record {sid!r} has shape {arr.shape}, expected ({dim},)"
                    )
                if not np.all(np.isfinite(arr)):
                    raise CacheWriteError(f"record {sid!r} contains non-finite values")
                sid_bytes = sid.encode("utf-8")
                if len(sid_bytes) > 0xFFFF:
                    raise CacheWriteError(f"sample id too long: {sid[:40]!r}...")
                fh.write(struct.pack("<H", len(sid_bytes)))
                fh.write(sid_bytes)
                fh.write(np.ascontiguousarray(arr).tobytes())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
