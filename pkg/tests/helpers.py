"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from ihskit import models
from ihskit.data import Label, Sample, SampleSet, SplitAssignment
from ihskit.models import ModelKind, ModelSpec, default_hidden, loss_and_grads
from ihskit.store import (
    INSTRUCTION_DIGEST,
    EmbeddingStore,
    FeatureBundle,
    Pooling,
)

ALL_KINDS = list(ModelKind)
GRADCHECK_BATCH = 2


def spec_for(kind: ModelKind, d_tweet: int = 16, d_context: int = 16) -> ModelSpec:
    if kind == ModelKind.EMBED_HEAD:
        return ModelSpec(kind=kind, d_tweet=d_tweet, hidden=d_tweet)
    return ModelSpec(
        kind=kind,
        d_tweet=d_tweet,
        d_context=d_context,
        hidden=default_hidden(kind, d_tweet, d_context),
    )


def draw_feats(rng: np.random.Generator, kind: ModelKind, batch: int = GRADCHECK_BATCH,
               d_tweet: int = 16, d_context: int = 16) -> dict[str, np.ndarray]:
    feats = {"tweet": rng.normal(size=(batch, d_tweet))}
    if kind != ModelKind.EMBED_HEAD:
        feats["context"] = rng.normal(size=(batch, d_context))
        # Emotion entries bounded away from 0: production emotion classifiers
        # emit soft distributions, and near-zero features push gradient
        # coordinates below the finite-difference noise floor.
        e = rng.random((batch, 7)) + 1.0
        feats["emotion"] = e / e.sum(axis=1, keepdims=True)
    return feats


def bundles_of(feats: dict[str, np.ndarray], kind: ModelKind) -> list[FeatureBundle]:
    batch = feats["tweet"].shape[0]
    out = []
    for i in range(batch):
        if kind == ModelKind.EMBED_HEAD:
            out.append(FeatureBundle(tweet=feats["tweet"][i]))
        else:
            out.append(
                FeatureBundle(
                    tweet=feats["tweet"][i],
                    context=feats["context"][i],
                    emotion=feats["emotion"][i],
                )
            )
    return out


def well_conditioned(
    model: models.Model,
    feats: dict[str, np.ndarray],
    labels: np.ndarray,
    kink_margin: float = 1e-3,
    grad_floor: float = 4e-7,
) -> bool:
    """Finite-difference checks need well-conditioned points: every LeakyReLU
    pre-activation clear of the kink by more than the probe step can move it,
    and no gradient coordinate small enough that the O(eps^2) truncation term
    dominates the pinned relative-error formula (exact structural zeros are
    fine: both sides evaluate to exactly zero)."""
    fused = np.stack([models.fuse(model, b) for b in bundles_of(feats, model.spec.kind)])
    pre1 = fused @ model.params["mlp.l1.W"] + model.params["mlp.l1.b"]
    if np.abs(pre1).min() < kink_margin:
        return False
    if model.spec.kind == ModelKind.MOE_FUSION:
        gate_pre = feats["tweet"] @ model.params["gate.l1.W"] + model.params["gate.l1.b"]
        if np.abs(gate_pre).min() < kink_margin:
            return False
    _, grads = loss_and_grads(model, feats, labels)
    for g in grads.values():
        a = np.abs(g.reshape(-1))
        if ((a > 0) & (a < grad_floor)).any():
            return False
    return True


def conditioned_case(kind: ModelKind, seed: int, stream: int = 20260810):
    """Deterministic (model, feats, labels) tuple suitable for grad checks."""
    model = models.build_model(spec_for(kind), seed=seed)
    labels = np.array([0, 1][:GRADCHECK_BATCH])
    rng = np.random.default_rng([stream, seed, ALL_KINDS.index(kind)])
    for _ in range(200):
        feats = draw_feats(rng, kind)
        if well_conditioned(model, feats, labels):
            return model, feats, labels
    raise AssertionError(
        f"no well-conditioned draw found for {kind.value} seed {seed}; "
        "this points at a systematic gradient problem"
    )


def make_store(
    ids: list[str],
    vectors: np.ndarray,
    model_id: str = "test-encoder",
    pooling: Pooling = Pooling.NORMALIZED_SUM,
    digest: bytes = INSTRUCTION_DIGEST,
) -> EmbeddingStore:
    store = EmbeddingStore(
        model_id=model_id,
        pooling=pooling,
        dim=vectors.shape[1],
        instruction_digest=digest,
    )
    for sid, vec in zip(ids, vectors):
        store.add(sid, vec)
    return store


def emotion_rows(rng: np.random.Generator, n: int) -> np.ndarray:
    e = rng.random((n, 7)) + 0.2
    return e / e.sum(axis=1, keepdims=True)


def fusion_setup(n: int = 600, d_tweet: int = 8, d_context: int = 8, seed: int = 0):
    """Synthetic corpus with label signal spread across all three feature
    roles: shifted Gaussians for tweet and context, emotion mass moved
    between anger/disgust and joy."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    sign = np.where(labels[:, None] == 1, 1.0, -1.0)
    tweet = rng.normal(size=(n, d_tweet)) + sign * 1.2
    context = rng.normal(size=(n, d_context)) + sign * 0.8
    emotion = rng.random((n, 7)) * 0.2 + 0.05
    emotion[labels == 1, 3] += 1.0  # anger
    emotion[labels == 1, 1] += 0.5  # disgust
    emotion[labels == 0, 5] += 1.0  # joy
    emotion /= emotion.sum(axis=1, keepdims=True)

    ids = [f"fus-{i:05d}" for i in range(n)]
    samples = SampleSet(
        samples=[
            Sample(id=ids[i], text=f"fusion point {i}", label=Label(int(labels[i])),
                   dataset="ihc")
            for i in range(n)
        ],
        source="ihc",
    )
    n_train = int(n * 2 / 3)
    n_val = (n - n_train) // 2
    splits = SplitAssignment(
        train=ids[:n_train],
        validation=ids[n_train : n_train + n_val],
        test=ids[n_train + n_val :],
        ratios=(n_train / n, n_val / n, (n - n_train - n_val) / n),
        seed=seed,
    )
    stores = {
        "tweet": make_store(ids, tweet.astype(np.float32)),
        "context": make_store(ids, context.astype(np.float32)),
        "emotion": make_store(ids, emotion.astype(np.float32)),
    }
    return samples, splits, stores


def two_gaussian_setup(
    n_dim: int = 64,
    n_train: int = 2000,
    n_val: int = 500,
    n_test: int = 500,
    separation: float = 6.0,
    seed: int = 0,
):
    """Synthetic linearly-separable corpus: two unit-variance Gaussians whose
    means sit `separation` apart, plus a matching embedding store."""
    rng = np.random.default_rng(seed)
    total = n_train + n_val + n_test
    labels = rng.integers(0, 2, size=total)
    direction = np.ones(n_dim) / np.sqrt(n_dim)
    offsets = np.where(labels[:, None] == 1, 1.0, -1.0) * (separation / 2.0) * direction
    vectors = rng.normal(size=(total, n_dim)) + offsets

    ids = [f"syn-{i:05d}" for i in range(total)]
    samples = SampleSet(
        samples=[
            Sample(id=ids[i], text=f"synthetic point {i}", label=Label(int(labels[i])),
                   dataset="ihc")
            for i in range(total)
        ],
        source="ihc",
    )
    splits = SplitAssignment(
        train=ids[:n_train],
        validation=ids[n_train : n_train + n_val],
        test=ids[n_train + n_val :],
        ratios=(n_train / total, n_val / total, n_test / total),
        seed=seed,
    )
    store = make_store(ids, vectors.astype(np.float32))
    return samples, splits, {"tweet": store}
