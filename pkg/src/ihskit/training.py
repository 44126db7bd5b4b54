"""Training protocol: epoch loop, weighted-F1 checkpoint selection,
in-/cross-dataset evaluation, and multi-seed aggregation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Label, Sample, SampleSet
from .errors import ContractError, ProtocolError
from .metrics import Metrics, compute_metrics, mean_and_std
from .models import (
    Model,
    ModelSpec,
    build_model,
    forward,
    loss_and_grads,
    predict_labels,
)
from .optim import LrSchedule, OptimizerState, TrainHyper, adamw_step, lr_at
from .store import EmbeddingStore
from .data import SplitAssignment

log = logging.getLogger(__name__)


def label_map(samples: SampleSet | Sequence[Sample]) -> dict[str, Label]:
    items = samples.samples if isinstance(samples, SampleSet) else samples
    return {s.id: s.label for s in items}


def assemble_features(
    ids: Sequence[str],
    stores: Mapping[str, EmbeddingStore],
    spec: ModelSpec,
) -> dict[str, np.ndarray]:
    """Gather role-keyed float64 feature matrices for the given sample ids.

    Missing ids abort via the store's lookup error; emotion vectors are
    validated through FeatureBundle on the way in.
    """
    roles = spec.required_roles()
    for role in roles:
        if role not in stores:
            raise ContractError(f"model requires an embedding store for role {role!r}")
    feats: dict[str, np.ndarray] = {}
    for role in roles:
        store = stores[role]
        rows = [store.lookup(sid) for sid in ids]
        feats[role] = np.asarray(np.stack(rows), dtype=np.float64)
    if "emotion" in roles:
        emo = feats["emotion"]
        bad = (emo < 0).any(axis=1) | (np.abs(emo.sum(axis=1) - 1.0) > 1e-5)
        if bad.any():
            sid = ids[int(np.flatnonzero(bad)[0])]
            raise ContractError(
                f"emotion vector for sample {sid!r} is not a probability distribution"
            )
    return feats


@dataclass
class TrainedRun:
    spec: ModelSpec
    hyper: TrainHyper
    seed: int
    model: Model
    best_epoch: int
    best_val_weighted_f1: float
    history: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    total_steps: int = 0

    def manifest(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "hyper": self.hyper.to_dict(),
            "seed": self.seed,
            "step": self.total_steps,
            "best_epoch": self.best_epoch,
            "val_weighted_f1": self.best_val_weighted_f1,
            "provenance": self.provenance,
        }


def _predict(model: Model, feats: Mapping[str, np.ndarray]) -> np.ndarray:
    return predict_labels(forward(model, feats, train=False))


def _eval_metrics(model: Model, feats, labels: np.ndarray) -> Metrics:
    return compute_metrics(_predict(model, feats).tolist(), labels.tolist())


def store_provenance(stores: Mapping[str, EmbeddingStore]) -> dict:
    return {role: store.metadata() for role, store in stores.items()}


def train(
    spec: ModelSpec,
    samples: SampleSet | Sequence[Sample],
    splits: SplitAssignment,
    stores: Mapping[str, EmbeddingStore],
    hyper: TrainHyper,
    seed: int,
) -> TrainedRun:
    """Seeded epoch loop; keeps the epoch checkpoint with the best
    validation weighted F1 (ties resolve to the earliest epoch)."""
    labels_by_id = label_map(samples)
    for sid in list(splits.train) + list(splits.validation):
        if sid not in labels_by_id:
            raise ContractError(f"split id {sid!r} has no sample record")

    train_ids = list(splits.train)
    val_ids = list(splits.validation)
    train_feats = assemble_features(train_ids, stores, spec)
    val_feats = assemble_features(val_ids, stores, spec)
    train_labels = np.array([int(labels_by_id[i]) for i in train_ids], dtype=np.int64)
    val_labels = np.array([int(labels_by_id[i]) for i in val_ids], dtype=np.int64)

    model = build_model(spec, seed)
    rng = np.random.default_rng(seed)
    n = len(train_ids)
    steps_per_epoch = math.ceil(n / hyper.batch_size)
    total_steps = hyper.epochs * steps_per_epoch
    schedule = LrSchedule(hyper.learning_rate, total_steps, hyper.warmup_fraction)
    state = OptimizerState()

    history: list[dict] = []
    best_epoch = -1
    best_f1 = -1.0
    best_params: dict[str, np.ndarray] = model.copy_params()

    global_step = 0
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        seen = 0
        loss_sum = 0.0
        for b in range(steps_per_epoch):
            idx = perm[b * hyper.batch_size : (b + 1) * hyper.batch_size]
            batch_feats = {k: v[idx] for k, v in train_feats.items()}
            batch_labels = train_labels[idx]
            batch_ids = [train_ids[i] for i in idx]
            lr_now = lr_at(schedule, global_step)
            loss, grads = loss_and_grads(
                model, batch_feats, batch_labels, ids=batch_ids, train=True, rng=rng,
                class_weights=hyper.class_weights,
            )
            adamw_step(model.params, grads, state, hyper, lr_now)
            global_step += 1
            loss_sum += loss * len(idx)
            seen += len(idx)
        val_metrics = _eval_metrics(model, val_feats, val_labels)
        history.append(
            {"epoch": epoch, "train_loss": loss_sum / seen, "val": val_metrics}
        )
        if val_metrics.f1_weighted > best_f1:
            best_f1 = val_metrics.f1_weighted
            best_epoch = epoch
            best_params = model.copy_params()
        log.info(
            "seed %d epoch %d: train_loss=%.6f val_weighted_f1=%.4f",
            seed, epoch, loss_sum / seen, val_metrics.f1_weighted,
        )

    model.load_params(best_params)
    return TrainedRun(
        spec=spec,
        hyper=hyper,
        seed=seed,
        model=model,
        best_epoch=best_epoch,
        best_val_weighted_f1=best_f1,
        history=history,
        provenance=store_provenance(stores),
        total_steps=total_steps,
    )


def evaluate(
    run: TrainedRun,
    samples: SampleSet | Sequence[Sample],
    ids: Sequence[str],
    stores: Mapping[str, EmbeddingStore],
) -> Metrics:
    """Eval-mode argmax predictions (ties to not-hate) on the given ids."""
    if not ids:
        raise ContractError("cannot evaluate an empty id list")
    labels_by_id = label_map(samples)
    missing = [i for i in ids if i not in labels_by_id]
    if missing:
        raise ContractError(f"ids without sample records: {missing[:5]}")
    feats = assemble_features(ids, stores, run.spec)
    labels = np.array([int(labels_by_id[i]) for i in ids], dtype=np.int64)
    return _eval_metrics(run.model, feats, labels)


def check_store_compatibility(
    run_provenance: Mapping[str, Mapping],
    stores: Mapping[str, EmbeddingStore],
    roles: Sequence[str],
) -> None:
    """Refuse evaluation when store metadata differs from the training run."""
    for role in roles:
        trained = run_provenance.get(role)
        if trained is None:
            raise ProtocolError(f"training run has no provenance for role {role!r}")
        foreign = stores[role].metadata()
        for key in ("model_id", "pooling", "instruction_sha256"):
            if trained[key] != foreign[key]:
                raise ProtocolError(
                    f"store metadata mismatch for role {role!r}: "
                    f"{key} was {trained[key]!r} at training time but the "
                    f"evaluation store has {foreign[key]!r}"
                )


def cross_evaluate(
    run: TrainedRun,
    foreign_samples: SampleSet | Sequence[Sample],
    foreign_stores: Mapping[str, EmbeddingStore],
    ids: Sequence[str] | None = None,
) -> Metrics:
    """Evaluate the unmodified best checkpoint on a foreign corpus.

    Defaults to the full foreign dataset; pass ids to restrict to a split.
    """
    check_store_compatibility(run.provenance, foreign_stores, run.spec.required_roles())
    if ids is None:
        items = (
            foreign_samples.samples
            if isinstance(foreign_samples, SampleSet)
            else foreign_samples
        )
        ids = [s.id for s in items]
    return evaluate(run, foreign_samples, ids, foreign_stores)


@dataclass
class RunReport:
    seeds: list[int]
    per_seed: list[Metrics]
    mean: dict[str, float]
    std: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "per_seed": [m.to_dict() for m in self.per_seed],
            "mean": self.mean,
            "std": self.std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            seeds=list(d["seeds"]),
            per_seed=[Metrics.from_dict(m) for m in d["per_seed"]],
            mean=dict(d["mean"]),
            std=dict(d["std"]),
        )


def aggregate_runs(metrics_list: Sequence[Metrics], seeds: Sequence[int]) -> RunReport:
    """Field-wise mean and sample standard deviation across seeds."""
    if len(metrics_list) == 0:
        raise ContractError("cannot aggregate zero runs")
    if len(metrics_list) != len(seeds):
        raise ContractError("metrics list and seed list lengths differ")
    mean, std = mean_and_std(metrics_list)
    return RunReport(
        seeds=list(seeds), per_seed=list(metrics_list), mean=mean, std=std
    )


DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def run_multi_seed(
    spec: ModelSpec,
    samples: SampleSet | Sequence[Sample],
    splits: SplitAssignment,
    stores: Mapping[str, EmbeddingStore],
    hyper: TrainHyper,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    eval_split: str = "test",
) -> tuple[RunReport, list[TrainedRun]]:
    """Train once per seed, evaluate each on the chosen split, aggregate."""
    runs = []
    per_seed = []
    ids = splits.for_name(eval_split)
    for seed in seeds:
        run = train(spec, samples, splits, stores, hyper, seed)
        per_seed.append(evaluate(run, samples, ids, stores))
        runs.append(run)
    return aggregate_runs(per_seed, seeds), runs
