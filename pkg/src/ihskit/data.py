"""Dataset ingestion: corpus parsers, label rules, deterministic splits.

Four corpora are supported (IHC, SBIC, DynaHate, ToxiGen). Each parser
applies its corpus-specific label rule and emits the canonical sample
format; splits are a seeded shuffle followed by a floor/floor/remainder
partition.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, IngestError

log = logging.getLogger(__name__)

DATASETS = ("ihc", "sbic", "dynahate", "toxigen")

SPLIT_NAMES = ("train", "validation", "test")

# Accepted spellings for author-provided split columns.
_SPLIT_ALIASES = {
    "train": "train",
    "val": "validation",
    "validation": "validation",
    "dev": "validation",
    "test": "test",
}

# Default column maps; distribution formats vary by release, so every name
# can be overridden through the run configuration.
DEFAULT_COLUMNS = {
    "ihc": {"text": "post", "label": "class"},
    "sbic": {"text": "post", "score": "offensiveYN", "group": None},
    "dynahate": {"text": "text", "label": "label"},
    "toxigen": {
        "text": "text",
        "human": "toxicity_human",
        "model": "toxicity_ai",
        "split": "split",
    },
}

DEFAULT_DELIMITERS = {"ihc": "\t", "sbic": ",", "dynahate": ",", "toxigen": ","}

# Per-corpus train/validation/test conventions (ToxiGen usually ships its
# own split, in which case these are ignored).
DEFAULT_RATIOS = {
    "ihc": (0.6, 0.2, 0.2),
    "dynahate": (0.6, 0.2, 0.2),
    "sbic": (0.8, 0.1, 0.1),
    "toxigen": (0.7, 0.1, 0.2),
}


class Label(IntEnum):
    NOT_HATE = 0
    HATE = 1


@dataclass(frozen=True)
class Sample:
    id: str
    text: str
    label: Label
    dataset: str
    split: str | None = None


@dataclass
class SampleSet:
    samples: list[Sample]
    source: str

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise IngestError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if not s.text.strip():
                raise IngestError(f"sample {s.id!r} has empty text")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def counts(self) -> dict[Label, int]:
        tallies = {Label.NOT_HATE: 0, Label.HATE: 0}
        for s in self.samples:
            tallies[s.label] += 1
        return tallies

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}


@dataclass(frozen=True)
class SplitAssignment:
    train: list[str]
    validation: list[str]
    test: list[str]
    ratios: tuple[float, float, float]
    seed: int

    def all_ids(self) -> set[str]:
        return set(self.train) | set(self.validation) | set(self.test)

    def for_name(self, name: str) -> list[str]:
        if name not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {name!r}; expected one of {SPLIT_NAMES}")
        return getattr(self, "validation" if name == "validation" else name)

    def to_dict(self) -> dict:
        return {
            "ratios": list(self.ratios),
            "seed": self.seed,
            "train": self.train,
            "validation": self.validation,
            "test": self.test,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(
            train=list(d["train"]),
            validation=list(d["validation"]),
            test=list(d["test"]),
            ratios=tuple(d["ratios"]),
            seed=int(d["seed"]),
        )


def label_sbic(offensiveness_scores: Sequence[float]) -> Label:
    """Aggregate per-annotator offensiveness; mean >= 0.5 counts as hate."""
    if len(offensiveness_scores) == 0:
        raise IngestError("SBIC post has no offensiveness annotations")
    for s in offensiveness_scores:
        if not (0.0 <= s <= 1.0):
            raise IngestError(f"offensiveness score {s} outside [0, 1]")
    mean = sum(offensiveness_scores) / len(offensiveness_scores)
    return Label.HATE if mean >= 0.5 else Label.NOT_HATE


def label_toxigen(human_toxicity: float, model_toxicity: float) -> Label:
    """Hate iff the human plus model toxicity scores strictly exceed 5.5."""
    for name, v in (("human", human_toxicity), ("model", model_toxicity)):
        if not math.isfinite(v) or v < 0:
            raise IngestError(f"{name} toxicity score {v} is not a finite nonnegative value")
    return Label.HATE if human_toxicity + model_toxicity > 5.5 else Label.NOT_HATE


def _require_columns(header: Sequence[str], wanted: Iterable[str], path) -> None:
    missing = [c for c in wanted if c and c not in header]
    if missing:
        raise IngestError(f"{path}: missing column(s) {missing}; header has {list(header)}")


def _read_rows(path: Path, delimiter: str) -> tuple[list[str], list[tuple[int, dict]]]:
    """Return (header, [(1-based data row number, row dict), ...])."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: empty file, no header row")
        rows = [(i, row) for i, row in enumerate(reader, start=1)]
    if not rows:
        raise IngestError(f"{path}: no data rows")
    return list(reader.fieldnames), rows


def _parse_float(value: str | None, *, path, row_no: int, column: str) -> float:
    if value is None or value.strip() == "":
        raise IngestError(f"{path}: row {row_no}: missing value in column {column!r}")
    try:
        return float(value)
    except ValueError as exc:
        raise IngestError(
            f"{path}: row {row_no}: cannot parse {value!r} in column {column!r}"
        ) from exc


def ingest(
    kind: str,
    source_path: str | Path,
    columns: dict[str, str] | None = None,
    delimiter: str | None = None,
) -> SampleSet:
    """Parse one corpus file into a SampleSet with the corpus's label rule.

    IHC keeps implicit_hate/not_hate rows and drops explicit_hate; SBIC
    aggregates per-annotator offensiveness per post; DynaHate maps its
    hate/nothate tokens; ToxiGen thresholds human+model toxicity and keeps
    an author-provided split column when one is present. Malformed rows
    raise IngestError with the data row number; nothing is skipped silently.
    """
    if kind not in DATASETS:
        raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {DATASETS}")
    path = Path(source_path)
    cols = dict(DEFAULT_COLUMNS[kind])
    if columns:
        cols.update(columns)
    delim = delimiter or DEFAULT_DELIMITERS[kind]

    header, rows = _read_rows(path, delim)
    if kind == "ihc":
        samples = _ingest_ihc(path, header, rows, cols)
    elif kind == "sbic":
        samples = _ingest_sbic(path, header, rows, cols)
    elif kind == "dynahate":
        samples = _ingest_dynahate(path, header, rows, cols)
    else:
        samples = _ingest_toxigen(path, header, rows, cols)

    out = SampleSet(samples=samples, source=kind)
    counts = out.counts
    log.info(
        "ingested %s: %d samples (hate=%d, not_hate=%d) from %s",
        kind, len(out), counts[Label.HATE], counts[Label.NOT_HATE], path,
    )
    if kind == "dynahate":
        # Row counts for this corpus differ across published distributions;
        # the supplied file is taken as-is.
        log.info("dynahate distributions vary in size; using the supplied file verbatim")
    return out


def _clean_text(raw: str | None, *, path, row_no: int) -> str:
    if raw is None or not raw.strip():
        raise IngestError(f"{path}: row {row_no}: empty text field")
    return raw


def _ingest_ihc(path, header, rows, cols) -> list[Sample]:
    _require_columns(header, [cols["text"], cols["label"]], path)
    samples = []
    for row_no, row in rows:
        token = (row.get(cols["label"]) or "").strip()
        if token == "explicit_hate":
            continue
        if token == "implicit_hate":
            lab = Label.HATE
        elif token == "not_hate":
            lab = Label.NOT_HATE
        else:
            raise IngestError(f"{path}: row {row_no}: unknown IHC class token {token!r}")
        text = _clean_text(row.get(cols["text"]), path=path, row_no=row_no)
        samples.append(Sample(id=f"ihc-{len(samples):06d}", text=text, label=lab, dataset="ihc"))
    if not samples:
        raise IngestError(f"{path}: all rows were explicit_hate; nothing to ingest")
    return samples


def _ingest_sbic(path, header, rows, cols) -> list[Sample]:
    group_col = cols.get("group") or cols["text"]
    _require_columns(header, [cols["text"], cols["score"], group_col], path)
    order: list[str] = []
    texts: dict[str, str] = {}
    scores: dict[str, list[float]] = {}
    first_row: dict[str, int] = {}
    blank = 0
    for row_no, row in rows:
        key = row.get(group_col)
        if key is None or key == "":
            raise IngestError(f"{path}: row {row_no}: empty group key in column {group_col!r}")
        if key not in scores:
            order.append(key)
            scores[key] = []
            texts[key] = _clean_text(row.get(cols["text"]), path=path, row_no=row_no)
            first_row[key] = row_no
        raw = row.get(cols["score"])
        if raw is None or raw.strip() == "":
            blank += 1  # annotator skipped; excluded from the mean
            continue
        score = _parse_float(raw, path=path, row_no=row_no, column=cols["score"])
        if not (0.0 <= score <= 1.0):
            raise IngestError(f"{path}: row {row_no}: offensiveness {score} outside [0, 1]")
        scores[key].append(score)
    if blank:
        log.warning("sbic: %d blank offensiveness annotations excluded from aggregation", blank)
    samples = []
    for key in order:
        if not scores[key]:
            raise IngestError(
                f"{path}: row {first_row[key]}: post has no usable offensiveness scores"
            )
        samples.append(
            Sample(
                id=f"sbic-{len(samples):06d}",
                text=texts[key],
                label=label_sbic(scores[key]),
                dataset="sbic",
            )
        )
    return samples


def _ingest_dynahate(path, header, rows, cols) -> list[Sample]:
    _require_columns(header, [cols["text"], cols["label"]], path)
    samples = []
    for row_no, row in rows:
        token = (row.get(cols["label"]) or "").strip()
        if token == "hate":
            lab = Label.HATE
        elif token == "nothate":
            lab = Label.NOT_HATE
        else:
            raise IngestError(f"{path}: row {row_no}: unknown DynaHate label token {token!r}")
        text = _clean_text(row.get(cols["text"]), path=path, row_no=row_no)
        samples.append(
            Sample(id=f"dynahate-{len(samples):06d}", text=text, label=lab, dataset="dynahate")
        )
    return samples


def _ingest_toxigen(path, header, rows, cols) -> list[Sample]:
    _require_columns(header, [cols["text"], cols["human"], cols["model"]], path)
    has_split = cols.get("split") and cols["split"] in header
    samples = []
    for row_no, row in rows:
        human = _parse_float(row.get(cols["human"]), path=path, row_no=row_no, column=cols["human"])
        model = _parse_float(row.get(cols["model"]), path=path, row_no=row_no, column=cols["model"])
        split = None
        if has_split:
            raw = (row.get(cols["split"]) or "").strip().lower()
            if raw not in _SPLIT_ALIASES:
                raise IngestError(f"{path}: row {row_no}: unknown split token {raw!r}")
            split = _SPLIT_ALIASES[raw]
        text = _clean_text(row.get(cols["text"]), path=path, row_no=row_no)
        samples.append(
            Sample(
                id=f"toxigen-{len(samples):06d}",
                text=text,
                label=label_toxigen(human, model),
                dataset="toxigen",
                split=split,
            )
        )
    return samples


def _exact_fraction(ratio: float) -> Fraction:
    # Fraction(str(x)) keeps decimal-literal semantics: 0.6 -> 3/5, so
    # floor(ratio * N) never loses an integer boundary to float rounding.
    return Fraction(str(float(ratio)))


def make_splits(
    samples: SampleSet,
    ratios: Sequence[float],
    seed: int,
    stratify: bool = False,
) -> SplitAssignment:
    """Seeded shuffle, then floor(train)/floor(val)/remainder partition.

    With stratify=True the same rule is applied within each label group,
    preserving class balance across splits.
    """
    if len(ratios) != 3:
        raise ConfigError(f"expected three split ratios, got {len(ratios)}")
    fracs = [_exact_fraction(r) for r in ratios]
    if any(f <= 0 for f in fracs):
        raise ConfigError(f"split ratios must be positive, got {list(ratios)}")
    if abs(float(sum(fracs)) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {list(ratios)}")
    if len(samples) == 0:
        raise ConfigError("cannot split an empty sample set")

    ids = samples.ids()
    rng = np.random.default_rng(seed)

    def partition(index_list: list[int]) -> tuple[list[int], list[int], list[int]]:
        perm = rng.permutation(len(index_list))
        shuffled = [index_list[i] for i in perm]
        n = len(shuffled)
        n_train = int(fracs[0] * n)
        n_val = int(fracs[1] * n)
        return (
            shuffled[:n_train],
            shuffled[n_train : n_train + n_val],
            shuffled[n_train + n_val :],
        )

    if stratify:
        train_idx, val_idx, test_idx = [], [], []
        for label in (Label.NOT_HATE, Label.HATE):
            group = [i for i, s in enumerate(samples.samples) if s.label == label]
            if not group:
                continue
            tr, va, te = partition(group)
            train_idx += tr
            val_idx += va
            test_idx += te
    else:
        train_idx, val_idx, test_idx = partition(list(range(len(ids))))

    return SplitAssignment(
        train=[ids[i] for i in train_idx],
        validation=[ids[i] for i in val_idx],
        test=[ids[i] for i in test_idx],
        ratios=tuple(float(f) for f in fracs),
        seed=seed,
    )


def author_splits(samples: SampleSet, seed: int = 0) -> SplitAssignment | None:
    """Build an assignment from per-sample split tags, if every sample has one."""
    if not samples.samples or any(s.split is None for s in samples.samples):
        return None
    buckets = {name: [] for name in SPLIT_NAMES}
    for s in samples.samples:
        buckets[s.split].append(s.id)
    n = len(samples)
    return SplitAssignment(
        train=buckets["train"],
        validation=buckets["validation"],
        test=buckets["test"],
        ratios=(len(buckets["train"]) / n, len(buckets["validation"]) / n, len(buckets["test"]) / n),
        seed=seed,
    )


def resolve_splits(
    samples: SampleSet,
    ratios: Sequence[float],
    seed: int,
    stratify: bool = False,
) -> SplitAssignment:
    """Prefer the author-provided split when the corpus ships one."""
    provided = author_splits(samples, seed=seed)
    if provided is not None:
        log.info("using author-provided split (train=%d, validation=%d, test=%d)",
                 len(provided.train), len(provided.validation), len(provided.test))
        return provided
    return make_splits(samples, ratios, seed, stratify=stratify)


def write_samples_jsonl(samples: SampleSet | Sequence[Sample], path: str | Path) -> None:
    """Canonical JSONL: one record per line, UTF-8, LF line endings."""
    items = samples.samples if isinstance(samples, SampleSet) else list(samples)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in items:
            record = {"id": s.id, "text": s.text, "label": int(s.label), "dataset": s.dataset}
            if s.split is not None:
                record["split"] = s.split
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_samples_jsonl(path: str | Path) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}: line {line_no}: invalid JSON") from exc
            try:
                samples.append(
                    Sample(
                        id=record["id"],
                        text=record["text"],
                        label=Label(int(record["label"])),
                        dataset=record["dataset"],
                        split=record.get("split"),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise IngestError(f"{path}: line {line_no}: bad record ({exc})") from exc
    if not samples:
        raise IngestError(f"{path}: no sample records")
    return samples
