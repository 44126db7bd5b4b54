"""Command-line entry point for reproducible batch runs.

Subcommands: ingest, train, eval, cross-eval, multi-seed, report,
analyze-errors, probe-bias. Validation failures exit 1 with a one-line
error; usage errors exit 2; outputs are written atomically.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis, checkpoint, config as cfg, data, report as rpt, training
from .errors import ConfigError, EngineError
from .metrics import Metrics
from .store import load_stores

log = logging.getLogger("ihskit")


def _parse_ratios(raw: str) -> tuple[float, float, float]:
    try:
        values = [float(v) for v in raw.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse ratios {raw!r}") from None
    if len(values) != 3:
        raise ConfigError(f"expected three ratios, got {raw!r}")
    total = sum(values)
    if abs(total - 100.0) < 1e-6:
        values = [v / 100.0 for v in values]
    elif abs(total - 1.0) > 1e-6:
        raise ConfigError(f"ratios must sum to 1 (or 100), got {raw!r}")
    return tuple(values)


def _parse_store_args(pairs: list[str]) -> dict[str, str]:
    stores = {}
    for pair in pairs or []:
        role, sep, path = pair.partition("=")
        if not sep or role not in ("tweet", "context", "emotion"):
            raise ConfigError(
                f"bad --store argument {pair!r}; expected role=path with role in "
                "tweet/context/emotion"
            )
        stores[role] = path
    return stores


def _parse_col_args(pairs: list[str]) -> dict[str, str]:
    cols = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"bad --col argument {pair!r}; expected name=column")
        cols[key] = value
    return cols


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def cmd_ingest(args) -> int:
    if args.ratios:
        ratios = _parse_ratios(args.ratios)
    else:
        ratios = data.DEFAULT_RATIOS[args.dataset]
    samples = data.ingest(
        args.dataset, args.input, columns=_parse_col_args(args.col) or None,
        delimiter=args.delimiter,
    )
    splits = data.resolve_splits(samples, ratios, args.seed, stratify=args.stratify)
    split_of = {}
    for name in data.SPLIT_NAMES:
        for sid in splits.for_name(name):
            split_of[sid] = name
    annotated = [
        data.Sample(id=s.id, text=s.text, label=s.label, dataset=s.dataset,
                    split=split_of[s.id])
        for s in samples.samples
    ]
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_samples_jsonl(annotated, out)
    splits_path = Path(args.splits_output) if args.splits_output else out.with_suffix(".splits.json")
    cfg.write_json(splits.to_dict(), splits_path)
    counts = samples.counts
    print(
        f"ingested {len(samples)} samples (hate={counts[data.Label.HATE]}, "
        f"not_hate={counts[data.Label.NOT_HATE]}) -> {out} ; splits -> {splits_path}"
    )
    return 0


def _load_run_inputs(run_config: cfg.RunConfig):
    samples = data.read_samples_jsonl(run_config.samples)
    sample_set = data.SampleSet(samples=samples, source=samples[0].dataset)
    if run_config.splits:
        with open(run_config.splits, encoding="utf-8") as fh:
            splits = data.SplitAssignment.from_dict(json.load(fh))
    else:
        splits = data.author_splits(sample_set)
        if splits is None:
            raise ConfigError(
                "config has no 'splits' path and the samples carry no split tags"
            )
    for role, path in run_config.stores.items():
        if not Path(path).exists():
            raise ConfigError(f"embedding store for role {role!r} not found: {path}")
    stores = load_stores(run_config.stores)
    return sample_set, splits, stores


def _resolved_config_payload(run_config: cfg.RunConfig, stores) -> dict:
    return {
        "config": run_config.to_dict(),
        "provenance": cfg.provenance_block(run_config, training.store_provenance(stores)),
    }


def cmd_train(args) -> int:
    run_config = cfg.resolve_config(
        cfg.load_config_file(args.config),
        {"profile": args.profile, "output_dir": args.output_dir},
    )
    sample_set, splits, stores = _load_run_inputs(run_config)
    seed = args.seed if args.seed is not None else run_config.seeds[0]
    run = training.train(run_config.model, sample_set, splits, stores, run_config.hyper, seed)
    out = Path(run_config.output_dir)
    cfg.write_json(
        {**_resolved_config_payload(run_config, stores), "timestamp": _timestamp()},
        out / "config.resolved.json",
    )
    checkpoint.save_checkpoint(run, out / "checkpoint")
    cfg.write_json(
        {
            **_resolved_config_payload(run_config, stores),
            "seed": seed,
            "best_epoch": run.best_epoch,
            "best_val_weighted_f1": run.best_val_weighted_f1,
            "history": [
                {"epoch": h["epoch"], "train_loss": h["train_loss"], "val": h["val"].to_dict()}
                for h in run.history
            ],
        },
        out / "history.json",
    )
    print(
        f"trained seed {seed}: best epoch {run.best_epoch} "
        f"(val weighted F1 {run.best_val_weighted_f1:.4f}) -> {out / 'checkpoint'}"
    )
    return 0


def _eval_common(args):
    run = checkpoint.load_checkpoint(args.checkpoint)
    samples = data.read_samples_jsonl(args.samples)
    sample_set = data.SampleSet(samples=samples, source=samples[0].dataset)
    stores = load_stores(_parse_store_args(args.store))
    return run, sample_set, stores


def cmd_eval(args) -> int:
    run, sample_set, stores = _eval_common(args)
    with open(args.splits, encoding="utf-8") as fh:
        splits = data.SplitAssignment.from_dict(json.load(fh))
    ids = splits.for_name(args.split)
    metrics = training.evaluate(run, sample_set, ids, stores)
    payload = {
        "config": {
            "checkpoint": args.checkpoint,
            "samples": args.samples,
            "splits": args.splits,
            "split": args.split,
            "stores": _parse_store_args(args.store),
        },
        "split": args.split,
        "metrics": metrics.to_dict(),
        "samples_sha256": cfg.sha256_file(args.samples),
        "stores": training.store_provenance(stores),
        "timestamp": _timestamp(),
    }
    cfg.write_json(payload, Path(args.output))
    print(f"eval[{args.split}]: acc={metrics.accuracy:.4f} f1_macro={metrics.f1_macro:.4f}")
    return 0


def cmd_cross_eval(args) -> int:
    run, sample_set, stores = _eval_common(args)
    ids = None
    used = "full"
    if args.foreign_split == "test":
        if not args.splits:
            raise ConfigError("--foreign-split test requires --splits")
        with open(args.splits, encoding="utf-8") as fh:
            splits = data.SplitAssignment.from_dict(json.load(fh))
        ids = splits.test
        used = "test"
    metrics = training.cross_evaluate(run, sample_set, stores, ids=ids)
    payload = {
        "config": {
            "checkpoint": args.checkpoint,
            "samples": args.samples,
            "foreign_split": args.foreign_split,
            "stores": _parse_store_args(args.store),
        },
        "foreign_split": used,
        "metrics": metrics.to_dict(),
        "samples_sha256": cfg.sha256_file(args.samples),
        "stores": training.store_provenance(stores),
        "timestamp": _timestamp(),
    }
    cfg.write_json(payload, Path(args.output))
    print(
        f"cross-eval[{used}]: acc={metrics.accuracy:.4f} f1_macro={metrics.f1_macro:.4f}"
    )
    return 0


def _seed_worker(payload: dict) -> dict:
    """Train and evaluate one seed in a separate process."""
    from .models import ModelSpec
    from .optim import TrainHyper

    run_config = cfg.resolve_config(payload["config"])
    sample_set, splits, stores = _load_run_inputs(run_config)
    run = training.train(
        ModelSpec.from_dict(payload["config"]["model"]),
        sample_set,
        splits,
        stores,
        TrainHyper.from_dict(payload["config"]["hyper"]),
        payload["seed"],
    )
    ids = splits.for_name(run_config.eval_split)
    metrics = training.evaluate(run, sample_set, ids, stores)
    return metrics.to_dict()


def cmd_multi_seed(args) -> int:
    run_config = cfg.resolve_config(
        cfg.load_config_file(args.config),
        {"profile": args.profile, "output_dir": args.output_dir,
         "seeds": [int(s) for s in args.seeds.split(",")] if args.seeds else None},
    )
    sample_set, splits, stores = _load_run_inputs(run_config)
    ids = splits.for_name(run_config.eval_split)
    out = Path(run_config.output_dir)

    if args.jobs > 1:
        payload = {"config": run_config.to_dict()}
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            dicts = list(
                pool.map(_seed_worker, [{**payload, "seed": s} for s in run_config.seeds])
            )
        per_seed = [Metrics.from_dict(d) for d in dicts]
        report = training.aggregate_runs(per_seed, run_config.seeds)
        runs = []
    else:
        report, runs = training.run_multi_seed(
            run_config.model, sample_set, splits, stores, run_config.hyper,
            seeds=run_config.seeds, eval_split=run_config.eval_split,
        )

    cfg.write_json(
        {**_resolved_config_payload(run_config, stores), "timestamp": _timestamp()},
        out / "config.resolved.json",
    )
    payload = {
        **_resolved_config_payload(run_config, stores),
        "eval_split": run_config.eval_split,
        "report": report.to_dict(),
        "timestamp": _timestamp(),
    }
    cfg.write_json(payload, out / "report.json")
    if args.save_checkpoints and runs:
        for run in runs:
            checkpoint.save_checkpoint(run, out / f"checkpoint-seed{run.seed}")
    print(
        f"multi-seed over {run_config.seeds}: "
        f"acc={100 * report.mean['accuracy']:.2f} ({100 * report.std['accuracy']:.2f}) "
        f"f1_macro={100 * report.mean['f1_macro']:.2f} ({100 * report.std['f1_macro']:.2f}) "
        f"-> {out / 'report.json'}"
    )
    return 0


def cmd_report(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        payload = json.load(fh)
    report = training.RunReport.from_dict(payload["report"])
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = rpt.format_report_table(report, title=args.title)
    (out / "table.txt").write_text(table, encoding="utf-8")
    rpt.write_report_csv(report, out / "metrics.csv")
    rpt.render_report_figure(report, out / "metrics.png")
    print(table)
    print(f"wrote {out / 'table.txt'}, {out / 'metrics.csv'}, {out / 'metrics.png'}")
    return 0


def cmd_analyze_errors(args) -> int:
    run, sample_set, stores = _eval_common(args)
    directions = (
        [analysis.ErrorDirection(args.direction)]
        if args.direction != "both"
        else list(analysis.ErrorDirection)
    )
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_records = {}
    for direction in directions:
        records = analysis.confident_errors(
            run, sample_set, stores, direction, k=args.k
        )
        all_records[direction.value] = [r.to_dict() for r in records]
        (out / f"errors.{direction.value}.txt").write_text(
            rpt.format_error_table(records), encoding="utf-8"
        )
    cfg.write_json(
        {
            "config": {
                "checkpoint": args.checkpoint,
                "samples": args.samples,
                "stores": _parse_store_args(args.store),
                "direction": args.direction,
                "k": args.k,
            },
            "samples_sha256": cfg.sha256_file(args.samples),
            "k": args.k,
            "errors": all_records,
            "timestamp": _timestamp(),
        },
        out / "errors.json",
    )
    total = sum(len(v) for v in all_records.values())
    print(f"wrote {total} confident error records -> {out / 'errors.json'}")
    return 0


def cmd_probe_bias(args) -> int:
    targets = [t.strip() for t in args.targets.split(",")] if args.targets else list(
        analysis.DEFAULT_PROBE_TARGETS
    )
    if args.export_samples:
        samples = analysis.export_probe_samples(args.template, targets)
        data.write_samples_jsonl(samples, args.export_samples)
        print(f"wrote {len(samples)} probe samples -> {args.export_samples}")
        if not args.checkpoint:
            return 0
    if not args.checkpoint:
        raise ConfigError("probe-bias needs --checkpoint (or --export-samples alone)")
    run = checkpoint.load_checkpoint(args.checkpoint)
    stores = load_stores(_parse_store_args(args.store))
    result = analysis.bias_probe(run, args.template, targets, stores)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_json(
        {
            "config": {
                "checkpoint": args.checkpoint,
                "stores": _parse_store_args(args.store),
                "template": args.template,
                "targets": targets,
            },
            # probes are embedded under the run's own instruction template
            "store_provenance": training.store_provenance(stores),
            **result.to_dict(),
            "timestamp": _timestamp(),
        },
        out / "probe.json",
    )
    (out / "probe.txt").write_text(rpt.format_probe_table(result), encoding="utf-8")
    rpt.render_probe_figure(result, out / "probe.png")
    print(rpt.format_probe_table(result))
    print(f"wrote {out / 'probe.json'}, {out / 'probe.txt'}, {out / 'probe.png'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ihskit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a corpus file into canonical JSONL plus splits")
    p.add_argument("--dataset", required=True, choices=data.DATASETS)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument(
        "--ratios", default=None,
        help="train,val,test (percent or fractions); defaults to the corpus convention",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratify", action="store_true", help="stratify splits by label")
    p.add_argument("--splits-output", default=None)
    p.add_argument("--delimiter", default=None)
    p.add_argument("--col", action="append", help="column override name=column", default=[])
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one seed from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--profile", choices=sorted(("finetune-head", "linear-probe")), default=None)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--split", default="test", choices=data.SPLIT_NAMES)
    p.add_argument("--store", action="append", help="role=path", default=[])
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cross-eval", help="evaluate a checkpoint on a foreign corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", required=True, help="foreign corpus JSONL")
    p.add_argument("--store", action="append", help="role=path (foreign stores)", default=[])
    p.add_argument("--foreign-split", choices=("full", "test"), default="full")
    p.add_argument("--splits", default=None, help="foreign splits file (for --foreign-split test)")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("multi-seed", help="train/evaluate every seed and aggregate")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default=None, help="comma-separated override")
    p.add_argument("--profile", choices=sorted(("finetune-head", "linear-probe")), default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--save-checkpoints", action="store_true")
    p.set_defaults(func=cmd_multi_seed)

    p = sub.add_parser("report", help="render tables, CSV, and figures from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--title", default="results")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("analyze-errors", help="mine confidently misclassified samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--store", action="append", help="role=path", default=[])
    p.add_argument(
        "--direction",
        choices=("both", "hate_as_not_hate", "not_hate_as_hate"),
        default="both",
    )
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_analyze_errors)

    p = sub.add_parser("probe-bias", help="probe target sensitivity with templated statements")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--store", action="append", help="role=path (probe stores)", default=[])
    p.add_argument("--template", default=analysis.DEFAULT_PROBE_TEMPLATE)
    p.add_argument("--targets", default=None, help="comma-separated target list")
    p.add_argument("--export-samples", default=None, help="write probe texts as JSONL and exit")
    p.add_argument("--output-dir", default="probe")
    p.set_defaults(func=cmd_probe_bias)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    """Route argv to a subcommand; 0 on success, 1 on validation errors,
    2 on usage errors."""
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
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
