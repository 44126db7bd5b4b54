"""AdamW with decoupled weight decay, and the linear warmup/decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, NumericalError


@dataclass
class TrainHyper:
    learning_rate: float
    weight_decay: float = 0.5
    warmup_fraction: float = 0.2
    dropout: float = 0.2
    batch_size: int = 16
    epochs: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # Optional (not-hate, hate) loss weights; None trains unweighted.
    class_weights: tuple[float, float] | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be nonnegative, got {self.weight_decay}")
        if not (0.0 <= self.warmup_fraction <= 1.0):
            raise ConfigError(f"warmup fraction must lie in [0, 1], got {self.warmup_fraction}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch size and epochs must be positive")
        if self.class_weights is not None:
            self.class_weights = tuple(float(w) for w in self.class_weights)
            if len(self.class_weights) != 2 or any(w <= 0 for w in self.class_weights):
                raise ConfigError(
                    f"class_weights must be two positive values, got {self.class_weights}"
                )

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "warmup_fraction": self.warmup_fraction,
            "dropout": self.dropout,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "class_weights": list(self.class_weights) if self.class_weights else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHyper":
        d = dict(d)
        if d.get("class_weights") is not None:
            d["class_weights"] = tuple(d["class_weights"])
        return cls(**d)


# Training profiles: heads/fusion layers train short with a tiny rate; the
# linear probe trains longer with large batches.
PROFILES = {
    "finetune-head": TrainHyper(
        learning_rate=2e-6, weight_decay=0.5, warmup_fraction=0.2,
        dropout=0.2, batch_size=16, epochs=4,
    ),
    "linear-probe": TrainHyper(
        learning_rate=2e-3, weight_decay=0.5, warmup_fraction=0.2,
        dropout=0.2, batch_size=512, epochs=20,
    ),
}


def hyper_for(profile: str, overrides: dict | None = None) -> TrainHyper:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    hyper = PROFILES[profile]
    return replace(hyper, **overrides) if overrides else hyper


@dataclass
class OptimizerState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    hyper: TrainHyper,
    lr_now: float,
) -> None:
    """One decoupled-decay update, in place:

    p <- p - lr_now * weight_decay * p - lr_now * m_hat / (sqrt(v_hat) + eps)
    """
    state.step += 1
    t = state.step
    b1, b2, eps = hyper.beta1, hyper.beta2, hyper.epsilon
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr_now * hyper.weight_decay * p
        p -= lr_now * m_hat / (np.sqrt(v_hat) + eps)
        if not np.all(np.isfinite(p)):
            raise NumericalError(f"non-finite values in parameter {name!r} after update")


@dataclass(frozen=True)
class LrSchedule:
    base_rate: float
    total_steps: int
    warmup_fraction: float

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("schedule needs at least one step")
        if not (0.0 <= self.warmup_fraction <= 1.0):
            raise ConfigError(f"warmup fraction must lie in [0, 1], got {self.warmup_fraction}")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear ramp 0 -> base over the warmup steps, then base -> 0 at the end.

    Step 0 uses the first ramp increment (base / warmup_steps) so training
    never multiplies by exactly zero.
    """
    if not (0 <= step <= schedule.total_steps):
        raise ContractError(
            f"step {step} outside schedule range [0, {schedule.total_steps}]"
        )
    warmup_steps = schedule.warmup_fraction * schedule.total_steps
    if warmup_steps > 0 and step <= warmup_steps:
        effective = max(step, 1)
        return min(schedule.base_rate, schedule.base_rate * effective / warmup_steps)
    denom = schedule.total_steps - warmup_steps
    if denom <= 0:
        return 0.0
    return schedule.base_rate * (schedule.total_steps - step) / denom
