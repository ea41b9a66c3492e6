"""SGD-with-momentum and Adam parameter updates.

Parameters are a name -> Tensor dict; optimizer state is keyed the same
way and starts at zeros.  Updates are in-place and deterministic.
"""

from __future__ import annotations

import numpy as np

from .nn import F32, ShapeError, Tensor


class SgdState:
    def __init__(self):
        self.velocity: dict[str, np.ndarray] = {}


def sgd_step(
    params: dict[str, Tensor],
    state: SgdState,
    lr: float,
    momentum: float = 0.0,
) -> None:
    """v = momentum * v + grad; theta -= lr * v."""
    for name, p in params.items():
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"{name}: grad {p.grad.shape} vs param {p.data.shape}")
        if momentum != 0.0:
            v = state.velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = (F32(momentum) * v + p.grad).astype(F32)
            state.velocity[name] = v
            p.data -= F32(lr) * v
        else:
            p.data -= F32(lr) * p.grad


class AdamState:
    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: int = 0


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam: theta -= lr * m_hat / (sqrt(v_hat) + eps)."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"{name}: grad {p.grad.shape} vs param {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = (F32(beta1) * m + F32(1.0 - beta1) * p.grad).astype(F32)
        v = (F32(beta2) * v + F32(1.0 - beta2) * (p.grad * p.grad)).astype(F32)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / F32(bc1)
        v_hat = v / F32(bc2)
        p.data -= (F32(lr) * m_hat / (np.sqrt(v_hat) + F32(eps))).astype(F32)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
