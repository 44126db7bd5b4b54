"""Error mining and target-bias probing over a trained run."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .data import Label, Sample, SampleSet
from .errors import ContractError, EmbeddingLookupError
from .models import forward, softmax_pair
from .store import EmbeddingStore
from .training import TrainedRun, assemble_features, check_store_compatibility


class ErrorDirection(str, Enum):
    HATE_AS_NOT_HATE = "hate_as_not_hate"
    NOT_HATE_AS_HATE = "not_hate_as_hate"


@dataclass(frozen=True)
class ErrorRecord:
    sample_id: str
    text: str
    true_label: Label
    predicted_label: Label
    predicted_probability: float

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "text": self.text,
            "true_label": int(self.true_label),
            "predicted_label": int(self.predicted_label),
            "predicted_probability": self.predicted_probability,
        }


def confident_errors(
    run: TrainedRun,
    samples: SampleSet | Sequence[Sample],
    stores: Mapping[str, EmbeddingStore],
    direction: ErrorDirection,
    k: int = 20,
    ids: Sequence[str] | None = None,
) -> list[ErrorRecord]:
    """Top-k misclassifications in one direction, by predicted-class
    probability descending, ties broken by sample id ascending."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    direction = ErrorDirection(direction)
    items = samples.samples if isinstance(samples, SampleSet) else list(samples)
    by_id = {s.id: s for s in items}
    if ids is None:
        ids = [s.id for s in items]
    feats = assemble_features(ids, stores, run.spec)
    logits = forward(run.model, feats, train=False)
    true = Label.HATE if direction == ErrorDirection.HATE_AS_NOT_HATE else Label.NOT_HATE
    pred = Label.NOT_HATE if direction == ErrorDirection.HATE_AS_NOT_HATE else Label.HATE

    records = []
    for sid, row in zip(ids, logits):
        sample = by_id[sid]
        p_not, p_hate = softmax_pair(row)
        predicted = Label.HATE if p_hate > p_not else Label.NOT_HATE
        if sample.label != true or predicted != pred:
            continue
        prob = p_hate if predicted == Label.HATE else p_not
        if prob <= 0.5:  # exact tie; not a confident call
            continue
        records.append(
            ErrorRecord(
                sample_id=sid,
                text=sample.text,
                true_label=sample.label,
                predicted_label=predicted,
                predicted_probability=prob,
            )
        )
    records.sort(key=lambda r: (-r.predicted_probability, r.sample_id))
    return records[:k]


DEFAULT_PROBE_TEMPLATE = "{target} are stupid"
DEFAULT_PROBE_TARGETS = ("Black people", "White people", "Jews", "Muslims", "Gay", "They")


@dataclass(frozen=True)
class BiasProbeResult:
    template: str
    rows: list[tuple[str, float]]

    def to_dict(self) -> dict:
        return {
            "template": self.template,
            "rows": [{"target": t, "hate_probability": p} for t, p in self.rows],
        }


def probe_id(text: str) -> str:
    return "probe-" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def probe_texts(template: str, targets: Sequence[str]) -> list[str]:
    if "{target}" not in template:
        raise ContractError("probe template must contain a {target} slot")
    return [template.format(target=t) for t in targets]


def export_probe_samples(template: str, targets: Sequence[str]) -> list[Sample]:
    """Probe statements as canonical samples, for offline embedding."""
    return [
        Sample(id=probe_id(text), text=text, label=Label.NOT_HATE, dataset="probe")
        for text in probe_texts(template, targets)
    ]


def bias_probe(
    run: TrainedRun,
    template: str,
    targets: Sequence[str],
    probe_store: EmbeddingStore | Mapping[str, EmbeddingStore],
) -> BiasProbeResult:
    """Hate probability per instantiated target statement.

    The probe store must carry the instruction digest the run trained with;
    missing embeddings are reported together so the operator knows exactly
    which texts still need extraction.
    """
    stores = probe_store if isinstance(probe_store, Mapping) else {"tweet": probe_store}
    check_store_compatibility(run.provenance, stores, run.spec.required_roles())
    texts = probe_texts(template, targets)
    ids = [probe_id(t) for t in texts]
    missing = [
        text
        for text, sid in zip(texts, ids)
        if any(sid not in stores[role].records for role in run.spec.required_roles())
    ]
    if missing:
        raise EmbeddingLookupError(
            f"probe store is missing embeddings for texts: {missing}"
        )
    feats = assemble_features(ids, stores, run.spec)
    logits = forward(run.model, feats, train=False)
    rows = [
        (target, softmax_pair(row)[1]) for target, row in zip(targets, logits)
    ]
    return BiasProbeResult(template=template, rows=rows)
