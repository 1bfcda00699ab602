"""Bias-corrected Adam with L2 regularization folded into the gradient."""

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, check_finite


class AdamState:
    """First/second moment accumulators, one pair per named parameter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
    t: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update at step t >= 1.

    L2 regularization enters as grad + weight_decay * theta before the moment
    updates.
    """
    if t < 1:
        raise ContractError(f"adam step count must be >= 1, got {t}")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name] + weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        check_finite(p.data, f"adam_step({name})")
