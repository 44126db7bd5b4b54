"""The five classifier architectures over frozen cached features.

All of them end in the same two-layer MLP: a square first layer with
LeakyReLU and dropout, then a projection to the two class logits. The
fusion variants differ only in how the tweet, context, and emotion features
are combined before that MLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConstructionError, ContractError, NumericalError, ShapeError
from .store import EMOTION_CLASSES, FeatureBundle

N_EMOTION = len(EMOTION_CLASSES)
GATE_HIDDEN = 64


class ModelKind(str, Enum):
    EMBED_HEAD = "embed_head"
    CONCAT_FUSION = "concat_fusion"
    ADAPTIVE_FUSION = "adaptive_fusion"
    MOE_FUSION = "moe_fusion"
    SHARED_QUERY_FUSION = "shared_query_fusion"


FUSION_KINDS = (
    ModelKind.CONCAT_FUSION,
    ModelKind.ADAPTIVE_FUSION,
    ModelKind.MOE_FUSION,
    ModelKind.SHARED_QUERY_FUSION,
)


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    d_tweet: int
    d_context: int = 0
    d_emotion: int = N_EMOTION
    hidden: int = 0
    attention_heads: int = 8
    leaky_slope: float = 0.01
    dropout: float = 0.2
    share_kv: bool = True
    # Adaptive fusion squashes raw scalars with 2*sigmoid(x)-1 by default;
    # this switch selects a plain sigmoid instead.
    plain_sigmoid_squash: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.d_tweet < 1:
            raise ConstructionError(f"d_tweet must be positive, got {self.d_tweet}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConstructionError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.kind == ModelKind.EMBED_HEAD:
            if self.hidden != self.d_tweet:
                raise ConstructionError(
                    f"embed_head requires hidden == d_tweet ({self.d_tweet}), got {self.hidden}"
                )
            return
        if self.d_context < 1:
            raise ConstructionError(f"{self.kind.value} requires d_context >= 1")
        if self.d_emotion != N_EMOTION:
            raise ConstructionError(
                f"emotion features have {N_EMOTION} classes, got d_emotion={self.d_emotion}"
            )
        concat_width = self.d_tweet + self.d_context + self.d_emotion
        if self.kind == ModelKind.SHARED_QUERY_FUSION:
            if self.hidden < 1:
                raise ConstructionError("shared_query_fusion requires a positive hidden size")
            if self.attention_heads < 1 or self.hidden % self.attention_heads != 0:
                raise ConstructionError(
                    f"hidden ({self.hidden}) must be divisible by attention_heads "
                    f"({self.attention_heads})"
                )
            if self.share_kv and self.d_tweet != self.d_context:
                raise ConstructionError(
                    "shared K/V projections require d_tweet == d_context; "
                    "set share_kv=False for mixed dimensions"
                )
        elif self.hidden != concat_width:
            raise ConstructionError(
                f"{self.kind.value} requires hidden == d_tweet + d_context + d_emotion "
                f"({concat_width}), got {self.hidden}"
            )

    @property
    def mlp_width(self) -> int:
        """Width of the square first MLP layer (equals its input width)."""
        if self.kind == ModelKind.EMBED_HEAD:
            return self.d_tweet
        if self.kind == ModelKind.SHARED_QUERY_FUSION:
            return 2 * self.hidden + self.d_emotion
        return self.d_tweet + self.d_context + self.d_emotion

    def required_roles(self) -> tuple[str, ...]:
        if self.kind == ModelKind.EMBED_HEAD:
            return ("tweet",)
        return ("tweet", "context", "emotion")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "d_tweet": self.d_tweet,
            "d_context": self.d_context,
            "d_emotion": self.d_emotion,
            "hidden": self.hidden,
            "attention_heads": self.attention_heads,
            "leaky_slope": self.leaky_slope,
            "dropout": self.dropout,
            "share_kv": self.share_kv,
            "plain_sigmoid_squash": self.plain_sigmoid_squash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**{**d, "kind": ModelKind(d["kind"])})


def default_hidden(kind: ModelKind, d_tweet: int, d_context: int = 0) -> int:
    """The spec-rule hidden size for each architecture."""
    kind = ModelKind(kind)
    if kind == ModelKind.EMBED_HEAD:
        return d_tweet
    if kind == ModelKind.SHARED_QUERY_FUSION:
        return d_tweet
    return d_tweet + d_context + N_EMOTION


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: Mapping[str, np.ndarray]) -> None:
        if set(params) != set(self.params):
            raise ShapeError("checkpoint parameter names do not match the model spec")
        for name, arr in params.items():
            if arr.shape != self.params[name].shape:
                raise ShapeError(f"parameter {name!r}: shape {arr.shape} does not match")
            self.params[name] = np.asarray(arr, dtype=np.float64).copy()


def build_model(spec: ModelSpec, seed: int) -> Model:
    """Construct a model with seeded initialization."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def dense(prefix: str, fan_in: int, fan_out: int) -> None:
        params[f"{prefix}.W"] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out))
        params[f"{prefix}.b"] = np.zeros(fan_out)

    if spec.kind == ModelKind.ADAPTIVE_FUSION:
        # Raw scalars start near 1 (squash ~0.46) so every source
        # contributes from the first step; 0 would zero a feature block.
        for role in ("tweet", "context", "emotion"):
            params[f"alpha.{role}"] = rng.normal(1.0, 0.25, (1,))
    elif spec.kind == ModelKind.MOE_FUSION:
        dense("gate.l1", spec.d_tweet, GATE_HIDDEN)
        dense("gate.l2", GATE_HIDDEN, 3)
    elif spec.kind == ModelKind.SHARED_QUERY_FUSION:
        dm = spec.hidden
        params["attn.q"] = rng.normal(0.0, 1.0 / math.sqrt(dm), (dm,))
        if spec.share_kv:
            dense("attn.k", spec.d_tweet, dm)
            dense("attn.v", spec.d_tweet, dm)
            dense("attn.o", dm, dm)
        else:
            for role, d_src in (("tweet", spec.d_tweet), ("context", spec.d_context)):
                dense(f"attn.{role}.k", d_src, dm)
                dense(f"attn.{role}.v", d_src, dm)
                dense(f"attn.{role}.o", dm, dm)

    width = spec.mlp_width
    dense("mlp.l1", width, width)
    dense("mlp.l2", width, 2)
    return Model(spec=spec, params=params)


def _stack(bundles: Sequence[FeatureBundle], spec: ModelSpec) -> dict[str, np.ndarray]:
    if not bundles:
        raise ContractError("empty feature batch")
    feats = {"tweet": np.stack([b.tweet for b in bundles])}
    if spec.kind in FUSION_KINDS:
        for role in ("context", "emotion"):
            for b in bundles:
                if getattr(b, role) is None:
                    raise ContractError(f"fusion architecture requires the {role!r} feature")
            feats[role] = np.stack([getattr(b, role) for b in bundles])
    return feats


def _check_dims(feats: Mapping[str, np.ndarray], spec: ModelSpec) -> None:
    expected = {"tweet": spec.d_tweet, "context": spec.d_context, "emotion": spec.d_emotion}
    for role in spec.required_roles():
        if role not in feats:
            raise ContractError(f"missing required feature {role!r}")
        got = feats[role].shape
        if len(got) != 2 or got[1] != expected[role]:
            raise ShapeError(
                f"feature {role!r} has shape {got}, expected (batch, {expected[role]})"
            )
    batch_sizes = {feats[r].shape[0] for r in spec.required_roles()}
    if len(batch_sizes) != 1:
        raise ShapeError(f"inconsistent batch sizes across features: {batch_sizes}")


def _mlp(x: Tensor, t: Mapping[str, Tensor], spec: ModelSpec, train: bool, rng) -> Tensor:
    h = ad.leaky_relu(ad.add(ad.matmul(x, t["mlp.l1.W"]), t["mlp.l1.b"]), spec.leaky_slope)
    if train:
        h = ad.dropout(h, spec.dropout, rng)
    return ad.add(ad.matmul(h, t["mlp.l2.W"]), t["mlp.l2.b"])


def _squash(raw: Tensor, plain: bool) -> Tensor:
    s = ad.sigmoid(raw)
    if plain:
        return s
    return ad.add(ad.scale(s, 2.0), ad.constant(np.array(-1.0)))


def _gate_alphas(tweet: Tensor, t: Mapping[str, Tensor], spec: ModelSpec, train: bool, rng) -> Tensor:
    h = ad.leaky_relu(ad.add(ad.matmul(tweet, t["gate.l1.W"]), t["gate.l1.b"]), spec.leaky_slope)
    if train:
        h = ad.dropout(h, spec.dropout, rng)
    logits = ad.add(ad.matmul(h, t["gate.l2.W"]), t["gate.l2.b"])
    return ad.softmax(logits, axis=1)


def _attend(
    x: Tensor,
    q: Tensor,
    t: Mapping[str, Tensor],
    prefix: str,
    heads: int,
    train: bool,
    dropout_p: float,
    rng,
) -> Tensor:
    """Multi-head attention of a learnable query over positions of x.

    x: (B, k, d_src); returns (B, dm). The query attends over the k
    positions; with k == 1 the attention weights are identically 1.
    """
    batch, k = x.shape[0], x.shape[1]
    keys = ad.add(ad.matmul(x, t[f"{prefix}.k.W"]), t[f"{prefix}.k.b"])  # (B, k, dm)
    values = ad.add(ad.matmul(x, t[f"{prefix}.v.W"]), t[f"{prefix}.v.b"])
    dm = keys.shape[-1]
    dh = dm // heads
    k4 = ad.reshape(keys, (batch, k, heads, dh))
    v4 = ad.reshape(values, (batch, k, heads, dh))
    q4 = ad.reshape(q, (1, 1, heads, dh))
    scores = ad.scale(ad.sum_(ad.mul(k4, q4), axis=3), 1.0 / math.sqrt(dh))  # (B, k, H)
    weights = ad.softmax(scores, axis=1)
    ctx = ad.sum_(ad.mul(ad.reshape(weights, (batch, k, heads, 1)), v4), axis=1)  # (B, H, dh)
    out = ad.add(ad.matmul(ad.reshape(ctx, (batch, dm)), t[f"{prefix}.o.W"]), t[f"{prefix}.o.b"])
    if train:
        out = ad.dropout(out, dropout_p, rng)
    return out


def _fuse_tensors(
    spec: ModelSpec,
    t: Mapping[str, Tensor],
    feats: Mapping[str, np.ndarray],
    train: bool,
    rng,
) -> Tensor:
    """Pre-MLP representation batch for the model's fusion kind."""
    tweet = ad.constant(feats["tweet"])
    if spec.kind == ModelKind.EMBED_HEAD:
        return tweet

    context = ad.constant(feats["context"])
    emotion = ad.constant(feats["emotion"])

    if spec.kind == ModelKind.CONCAT_FUSION:
        return ad.concat([tweet, context, emotion], axis=1)
    if spec.kind == ModelKind.ADAPTIVE_FUSION:
        return ad.concat(
            [
                ad.mul(tweet, _squash(t["alpha.tweet"], spec.plain_sigmoid_squash)),
                ad.mul(context, _squash(t["alpha.context"], spec.plain_sigmoid_squash)),
                ad.mul(emotion, _squash(t["alpha.emotion"], spec.plain_sigmoid_squash)),
            ],
            axis=1,
        )
    if spec.kind == ModelKind.MOE_FUSION:
        alphas = _gate_alphas(tweet, t, spec, train, rng)  # (B, 3)
        return ad.concat(
            [
                ad.mul(tweet, ad.narrow(alphas, 1, 0, 1)),
                ad.mul(context, ad.narrow(alphas, 1, 1, 1)),
                ad.mul(emotion, ad.narrow(alphas, 1, 2, 1)),
            ],
            axis=1,
        )
    # SHARED_QUERY_FUSION
    batch = tweet.shape[0]
    tweet3 = ad.reshape(tweet, (batch, 1, spec.d_tweet))
    context3 = ad.reshape(context, (batch, 1, spec.d_context))
    q = t["attn.q"]
    prefix_t = "attn" if spec.share_kv else "attn.tweet"
    prefix_c = "attn" if spec.share_kv else "attn.context"
    att_t = _attend(tweet3, q, t, prefix_t, spec.attention_heads, train, spec.dropout, rng)
    att_c = _attend(context3, q, t, prefix_c, spec.attention_heads, train, spec.dropout, rng)
    return ad.concat([att_t, att_c, emotion], axis=1)


def _forward_tensors(
    spec: ModelSpec,
    t: Mapping[str, Tensor],
    feats: Mapping[str, np.ndarray],
    train: bool,
    rng,
) -> Tensor:
    return _mlp(_fuse_tensors(spec, t, feats, train, rng), t, spec, train, rng)


def forward(
    model: Model,
    inputs: Sequence[FeatureBundle] | Mapping[str, np.ndarray],
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Batch forward pass; returns (B, 2) logits.

    Train mode draws fresh dropout masks from rng; eval mode is
    deterministic. Dimension mismatches raise before any computation.
    """
    feats = inputs if isinstance(inputs, Mapping) else _stack(inputs, model.spec)
    _check_dims(feats, model.spec)
    if train and rng is None:
        raise ContractError("train-mode forward requires a random generator")
    with ad.no_grad():
        tensors = {k: Tensor(v) for k, v in model.params.items()}
        logits = _forward_tensors(model.spec, tensors, feats, train, rng)
    if not np.all(np.isfinite(logits.data)):
        raise NumericalError("forward pass produced non-finite logits")
    return logits.data


def _batch_loss(losses, labels, class_weights):
    """Mean cross-entropy, optionally weighted per class (weighted mean)."""
    if class_weights is None:
        return ad.mean_(losses)
    weights = np.asarray(class_weights, dtype=np.float64)[labels]
    weighted = ad.mul(losses, ad.constant(weights))
    return ad.scale(ad.sum_(weighted), 1.0 / float(weights.sum()))


def loss_and_grads(
    model: Model,
    feats: Mapping[str, np.ndarray],
    labels: np.ndarray,
    ids: Sequence[str] | None = None,
    train: bool = False,
    rng: np.random.Generator | None = None,
    class_weights: tuple[float, float] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and gradients for every parameter."""
    _check_dims(feats, model.spec)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be 0 or 1")
    tensors = {k: Tensor(v) for k, v in model.params.items()}
    logits = _forward_tensors(model.spec, tensors, feats, train, rng)
    losses = ad.cross_entropy_with_logits(logits, labels)
    bad = np.flatnonzero(~np.isfinite(losses.data))
    if bad.size:
        which = ids[bad[0]] if ids is not None else f"batch index {bad[0]}"
        raise NumericalError(f"non-finite loss for sample {which}")
    loss = _batch_loss(losses, labels, class_weights)
    loss.backward()
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
    }
    return loss.item(), grads


def loss_only(
    model: Model,
    feats: Mapping[str, np.ndarray],
    labels: np.ndarray,
    class_weights: tuple[float, float] | None = None,
) -> float:
    """Eval-mode mean cross-entropy without building the tape."""
    labels = np.asarray(labels, dtype=np.int64)
    with ad.no_grad():
        tensors = {k: Tensor(v) for k, v in model.params.items()}
        logits = _forward_tensors(model.spec, tensors, feats, False, None)
        losses = ad.cross_entropy_with_logits(logits, labels)
        return _batch_loss(losses, labels, class_weights).item()


def fuse(model: Model, features: FeatureBundle) -> np.ndarray:
    """The pre-MLP fused representation of one sample (eval mode)."""
    spec = model.spec
    feats = _stack([features], spec)
    _check_dims(feats, spec)
    with ad.no_grad():
        t = {k: Tensor(v) for k, v in model.params.items()}
        fused = _fuse_tensors(spec, t, feats, False, None)
    return fused.data[0].copy()


def fusion_alphas(model: Model, features: FeatureBundle | None = None) -> dict[str, float]:
    """Current per-source scaling factors (adaptive: global; MoE: per input)."""
    spec = model.spec
    if spec.kind == ModelKind.ADAPTIVE_FUSION:
        out = {}
        with ad.no_grad():
            for role in ("tweet", "context", "emotion"):
                raw = Tensor(model.params[f"alpha.{role}"])
                out[role] = float(_squash(raw, spec.plain_sigmoid_squash).data[0])
        return out
    if spec.kind == ModelKind.MOE_FUSION:
        if features is None:
            raise ContractError("MoE alphas are per-input; pass a feature bundle")
        feats = _stack([features], spec)
        with ad.no_grad():
            t = {k: Tensor(v) for k, v in model.params.items()}
            alphas = _gate_alphas(ad.constant(feats["tweet"]), t, spec, False, None).data[0]
        return {"tweet": float(alphas[0]), "context": float(alphas[1]), "emotion": float(alphas[2])}
    raise ContractError(f"{spec.kind.value} has no fusion alphas")


def predict_proba(model: Model, features: FeatureBundle) -> tuple[float, float]:
    """(not-hate, hate) probability pair for one sample."""
    logits = forward(model, [features])
    return softmax_pair(logits[0])


def softmax_pair(logit_row: np.ndarray) -> tuple[float, float]:
    z = logit_row - logit_row.max()
    e = np.exp(z)
    p = e / e.sum()
    return float(p[0]), float(p[1])


def predict_labels(logits: np.ndarray) -> np.ndarray:
    """Argmax with exact ties resolving to not-hate."""
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)
