"""First-order optimizers over named parameter dictionaries.

Both steppers are functional: they return fresh arrays and never mutate
their inputs, which keeps gradient tapes and checkpoint snapshots safe to
hold across steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

Params = dict[str, np.ndarray]


def _check_aligned(params: Params, grads: Params):
    if params.keys() != grads.keys():
        missing = sorted(params.keys() ^ grads.keys())
        raise ContractError(f"params and grads disagree on names: {missing}")
    for name, p in params.items():
        if p.shape != grads[name].shape:
            raise ShapeError(
                f"{name}: param shape {p.shape} vs grad shape {grads[name].shape}"
            )


def sgd_step(params: Params, grads: Params, lr: float) -> Params:
    """Plain gradient descent: p - lr * g for every named array."""
    _check_aligned(params, grads)
    lr = float(lr)
    return {name: p - lr * grads[name] for name, p in params.items()}


@dataclass
class AdamState:
    """Per-parameter first and second moment estimates plus the step count."""

    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0

    @classmethod
    def init(cls, params: Params) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: Params,
    grads: Params,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update; returns (new params, new state)."""
    _check_aligned(params, grads)
    if state.m.keys() != params.keys():
        raise ContractError("optimizer state does not match the parameter set")
    lr = float(lr)
    t = state.t + 1
    new_m: Params = {}
    new_v: Params = {}
    new_p: Params = {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_m[name] = m
        new_v[name] = v
        new_p[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_p, AdamState(m=new_m, v=new_v, t=t)
