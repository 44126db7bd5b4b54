"""Command-line entry point: extract embeddings, emotions, or context.

Job settings come from flags or a JSON config (flags win), mirroring the
engine's configuration style.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .backends import BackendError
from .embc import CacheWriteError
from .jobs import (
    CONTEXT_PROMPT,
    ExtractionError,
    ExtractorJob,
    extract_embeddings,
    extract_emotions,
    generate_context,
)
from .samples import SamplesError


def _merge_config(args, keys):
    merged = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        merged.update({k: v for k, v in raw.items() if k in keys})
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def cmd_extract(args) -> int:
    merged = _merge_config(
        args, ("model", "samples", "output", "role", "pooling", "batch_size", "device")
    )
    for required in ("model", "samples", "output"):
        if not merged.get(required):
            raise ExtractionError(f"extract needs --{required} (or config key)")
    job = ExtractorJob(
        model=merged["model"],
        samples_path=merged["samples"],
        output_path=merged["output"],
        role=merged.get("role", "tweet"),
        pooling=merged.get("pooling"),
        batch_size=merged.get("batch_size", 32),
        device=merged.get("device", "cpu"),
    )
    report = extract_embeddings(job)
    print(
        f"extracted {report.count} vectors (dim {report.dim}, "
        f"{report.truncated} truncated) -> {job.output_path}"
    )
    return 0


def cmd_emotions(args) -> int:
    merged = _merge_config(args, ("model", "samples", "output", "batch_size", "device"))
    for required in ("samples", "output"):
        if not merged.get(required):
            raise ExtractionError(f"emotions needs --{required} (or config key)")
    report = extract_emotions(
        merged["samples"], merged["output"],
        model=merged.get("model", "dummy-emotion"),
        batch_size=merged.get("batch_size", 32),
        device=merged.get("device", "cpu"),
    )
    print(f"extracted {report.count} emotion vectors -> {merged['output']}")
    return 0


def cmd_context(args) -> int:
    merged = _merge_config(
        args, ("generator", "samples", "output", "device", "max_new_tokens", "temperature")
    )
    for required in ("samples", "output"):
        if not merged.get(required):
            raise ExtractionError(f"context needs --{required} (or config key)")
    decoding = {}
    if merged.get("max_new_tokens") is not None:
        decoding["max_new_tokens"] = merged["max_new_tokens"]
    if merged.get("temperature") is not None:
        decoding["temperature"] = merged["temperature"]
    prompt = CONTEXT_PROMPT
    if args.prompt_file:
        with open(args.prompt_file, encoding="utf-8") as fh:
            prompt = fh.read()
    report = generate_context(
        merged["samples"], merged["output"],
        generator=merged.get("generator", "dummy-generator"),
        prompt=prompt,
        device=merged.get("device", "cpu"),
        **decoding,
    )
    print(
        f"generated {report.generated} contexts "
        f"({len(report.skipped)} skipped) -> {merged['output']}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ihsextract", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="pooled text embeddings to an EMBC cache")
    p.add_argument("--config", default=None, help="JSON job config; flags override")
    p.add_argument("--model", default=None, help="encoder id (dummy:<dim> for tests)")
    p.add_argument("--samples", default=None, help="canonical sample JSONL")
    p.add_argument("--output", default=None, help="EMBC cache path")
    p.add_argument("--role", choices=("tweet", "context"), default=None)
    p.add_argument("--pooling", choices=("normalized_sum", "mean_passthrough", "none"),
                   default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--device", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("emotions", help="7-class emotion probabilities to an EMBC cache")
    p.add_argument("--config", default=None)
    p.add_argument("--model", default=None, help="emotion classifier id")
    p.add_argument("--samples", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--device", default=None)
    p.set_defaults(func=cmd_emotions)

    p = sub.add_parser("context", help="generate context passages as JSONL")
    p.add_argument("--config", default=None)
    p.add_argument("--generator", default=None, help="generator model id")
    p.add_argument("--samples", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--prompt-file", default=None, help="override the built-in prompt")
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--device", default=None)
    p.set_defaults(func=cmd_context)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ExtractionError, BackendError, CacheWriteError, SamplesError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
