"""Classification metrics with hate as the positive class.

Zero-division convention: a class with no predicted instances gets
precision 0, a class with no actual instances gets recall 0, and F1 is 0
whenever precision + recall is 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ContractError


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassMetrics":
        return cls(
            precision=d["precision"], recall=d["recall"], f1=d["f1"], support=int(d["support"])
        )


@dataclass(frozen=True)
class Metrics:
    not_hate: ClassMetrics
    hate: ClassMetrics
    accuracy: float
    f1_weighted: float
    f1_macro: float

    def to_dict(self) -> dict:
        return {
            "not_hate": self.not_hate.to_dict(),
            "hate": self.hate.to_dict(),
            "accuracy": self.accuracy,
            "f1_weighted": self.f1_weighted,
            "f1_macro": self.f1_macro,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(
            not_hate=ClassMetrics.from_dict(d["not_hate"]),
            hate=ClassMetrics.from_dict(d["hate"]),
            accuracy=d["accuracy"],
            f1_weighted=d["f1_weighted"],
            f1_macro=d["f1_macro"],
        )

    def flatten(self) -> dict[str, float]:
        out = {}
        for cls_name, cm in (("not_hate", self.not_hate), ("hate", self.hate)):
            for field_name, value in cm.to_dict().items():
                out[f"{cls_name}.{field_name}"] = float(value)
        out["accuracy"] = self.accuracy
        out["f1_weighted"] = self.f1_weighted
        out["f1_macro"] = self.f1_macro
        return out


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def compute_metrics(predictions: Sequence[int], labels: Sequence[int]) -> Metrics:
    """Per-class precision/recall/F1, accuracy, weighted and macro F1."""
    if len(predictions) != len(labels):
        raise ContractError(
            f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels"
        )
    if len(labels) == 0:
        raise ContractError("cannot compute metrics on an empty set")
    tp = fp = fn = tn = 0
    for pred, true in zip(predictions, labels):
        p, t = int(pred), int(true)
        if p not in (0, 1) or t not in (0, 1):
            raise ContractError(f"labels must be binary, got pred={pred!r}, true={true!r}")
        if p == 1 and t == 1:
            tp += 1
        elif p == 1 and t == 0:
            fp += 1
        elif p == 0 and t == 1:
            fn += 1
        else:
            tn += 1
    n = len(labels)
    hate = ClassMetrics(*_prf(tp, fp, fn), support=tp + fn)
    not_hate = ClassMetrics(*_prf(tn, fn, fp), support=tn + fp)
    f1_macro = (not_hate.f1 + hate.f1) / 2.0
    f1_weighted = (not_hate.support * not_hate.f1 + hate.support * hate.f1) / n
    accuracy = (tp + tn) / n
    return Metrics(
        not_hate=not_hate,
        hate=hate,
        accuracy=accuracy,
        f1_weighted=f1_weighted,
        f1_macro=f1_macro,
    )


def mean_and_std(metrics_list: Sequence[Metrics]) -> tuple[dict[str, float], dict[str, float]]:
    """Field-wise mean and sample (N-1) standard deviation; std 0 when N == 1."""
    if not metrics_list:
        raise ContractError("cannot aggregate an empty metrics list")
    flat = [m.flatten() for m in metrics_list]
    keys = flat[0].keys()
    n = len(flat)
    mean = {k: sum(f[k] for f in flat) / n for k in keys}
    if n == 1:
        std = {k: 0.0 for k in keys}
    else:
        std = {
            k: (sum((f[k] - mean[k]) ** 2 for f in flat) / (n - 1)) ** 0.5 for k in keys
        }
    return mean, std
