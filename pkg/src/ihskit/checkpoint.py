"""Model checkpoints: JSON manifest plus a binary parameter blob.

Blob layout, little-endian, one entry per tensor in insertion order:
name-length u16, name bytes (UTF-8), rank u8, shape u32 per axis, then the
float64 values.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CacheCorruptionError
from .models import Model, ModelSpec, build_model
from .optim import TrainHyper
from .training import TrainedRun

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"


def _write_params(params: dict[str, np.ndarray], path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            for name, arr in params.items():
                name_bytes = name.encode("utf-8")
                fh.write(struct.pack("<H", len(name_bytes)))
                fh.write(name_bytes)
                fh.write(struct.pack("<B", arr.ndim))
                for size in arr.shape:
                    fh.write(struct.pack("<I", size))
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _read_params(path: Path) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise CacheCorruptionError(f"{path}: truncated parameter name length")
            (name_len,) = struct.unpack("<H", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise CacheCorruptionError(f"{path}: truncated values for parameter {name!r}")
            params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return params


def save_checkpoint(run: TrainedRun, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_path = directory / MANIFEST_NAME
    tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(run.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, manifest_path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    _write_params(run.model.params, directory / PARAMS_NAME)
    return directory


def load_checkpoint(directory: str | Path) -> TrainedRun:
    directory = Path(directory)
    with open(directory / MANIFEST_NAME, encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = ModelSpec.from_dict(manifest["spec"])
    model = build_model(spec, seed=manifest["seed"])
    model.load_params(_read_params(directory / PARAMS_NAME))
    return TrainedRun(
        spec=spec,
        hyper=TrainHyper.from_dict(manifest["hyper"]),
        seed=manifest["seed"],
        model=model,
        best_epoch=manifest["best_epoch"],
        best_val_weighted_f1=manifest["val_weighted_f1"],
        history=[],
        provenance=manifest["provenance"],
        total_steps=manifest["step"],
    )
