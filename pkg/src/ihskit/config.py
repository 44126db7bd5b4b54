"""Run configuration: JSON file plus flag overrides, resolved and re-emitted.

Every run writes the resolved configuration and input digests next to its
outputs so results can be traced back to exact inputs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .models import ModelSpec
from .optim import TrainHyper, hyper_for
from .training import DEFAULT_SEEDS

OUTPUT_DIR_ENV = "IHSKIT_OUTPUT_DIR"


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "runs")


@dataclass
class RunConfig:
    samples: str
    stores: dict[str, str]
    model: ModelSpec
    hyper: TrainHyper
    profile: str | None = None
    splits: str | None = None
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    eval_split: str = "test"
    output_dir: str = field(default_factory=default_output_dir)

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "splits": self.splits,
            "stores": dict(self.stores),
            "model": self.model.to_dict(),
            "profile": self.profile,
            "hyper": self.hyper.to_dict(),
            "seeds": list(self.seeds),
            "eval_split": self.eval_split,
            "output_dir": self.output_dir,
        }


def load_config_file(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return raw


def resolve_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Merge flag overrides over the file values and validate the result."""
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value

    for required in ("samples", "stores", "model"):
        if required not in merged:
            raise ConfigError(f"config is missing required field {required!r}")
    if not isinstance(merged["stores"], dict) or "tweet" not in merged["stores"]:
        raise ConfigError("config field 'stores' must map roles to paths, with 'tweet' present")

    try:
        model = ModelSpec.from_dict(merged["model"])
    except TypeError as exc:
        raise ConfigError(f"bad model spec: {exc}") from exc

    profile = merged.get("profile")
    hyper_overrides = merged.get("hyper_overrides") or {}
    if profile is not None:
        hyper = hyper_for(profile, hyper_overrides)
    elif "hyper" in merged:
        try:
            hyper = TrainHyper.from_dict({**merged["hyper"], **hyper_overrides})
        except TypeError as exc:
            raise ConfigError(f"bad hyperparameters: {exc}") from exc
    else:
        raise ConfigError("config needs either 'profile' or a full 'hyper' block")

    seeds = merged.get("seeds", list(DEFAULT_SEEDS))
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError(f"'seeds' must be a nonempty integer list, got {seeds!r}")

    return RunConfig(
        samples=str(merged["samples"]),
        splits=str(merged["splits"]) if merged.get("splits") else None,
        stores={role: str(p) for role, p in merged["stores"].items()},
        model=model,
        hyper=hyper,
        profile=profile,
        seeds=list(seeds),
        eval_split=merged.get("eval_split", "test"),
        output_dir=str(merged.get("output_dir", default_output_dir())),
    )


def provenance_block(config: RunConfig, stores_meta: dict) -> dict:
    return {
        "samples_sha256": sha256_file(config.samples),
        "stores": stores_meta,
    }


def write_json(payload: dict, path: str | Path) -> None:
    """Deterministic JSON artifact: sorted keys, trailing newline, atomic."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
