"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .models import Model, loss_and_grads, loss_only


def grad_check(
    model: Model,
    feats: Mapping[str, np.ndarray],
    labels: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in eval mode (dropout disabled) so the loss is a deterministic
    function of the parameters. Relative error per coordinate is
    |a - n| / max(1e-12, |a| + |n|).
    """
    _, grads = loss_and_grads(model, feats, labels, train=False)
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        gflat = np.asarray(grads[name]).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_only(model, feats, labels)
            flat[i] = orig - eps
            f_minus = loss_only(model, feats, labels)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = gflat[i]
            rel = abs(analytic - numeric) / max(1e-12, abs(analytic) + abs(numeric))
            worst = max(worst, rel)
    return worst
