# optim.py
# --------------------------------------------------------------------------------------
# Purpose:
#   AdamW with decoupled weight decay plus global-norm gradient clipping
#
# Update order (per step t, per parameter p with gradient g):
#   m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2
#   p = p * (1 - lr*wd)                    (only for matrices, ndim >= 2)
#   p = p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
#
# warmup_lr gives the linear learning-rate ramp used by meta training
# --------------------------------------------------------------------------------------

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from core.errors import ContractError, DimensionError
from core.tensorkit.tensor import Tensor

DEFAULT_LR = 3e-4
DEFAULT_BETAS = (0.9, 0.95)
DEFAULT_EPS = 1e-8
DEFAULT_WEIGHT_DECAY = 0.1


@dataclass
class OptState:
    """First/second moments and step counter; one slot per parameter, in order"""
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETAS[0]
    beta2: float = DEFAULT_BETAS[1]
    eps: float = DEFAULT_EPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def fresh(cls, params: Sequence[Tensor], **hyper) -> "OptState":
        st = cls(**hyper)
        st.m = [np.zeros_like(p.data) for p in params]
        st.v = [np.zeros_like(p.data) for p in params]
        return st


def adamw_step(params: Sequence[Tensor], grads: Optional[Sequence[np.ndarray]], state: OptState) -> None:
    """
    In-place AdamW update. grads=None uses each parameter's .grad
    Parameters without a gradient are treated as having zero gradient
    """
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise ContractError(f"{len(grads)} gradients for {len(params)} parameters")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ContractError("optimizer state was built for a different parameter list")

    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    decay = 1.0 - state.lr * state.weight_decay

    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"gradient {g.shape} / state {m.shape} vs parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if p.ndim >= 2:
            p.data *= decay
        p.data -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all .grad arrays so their global L2 norm is at most max_norm; returns the pre-clip norm"""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = total ** 0.5
    if max_norm > 0 and norm > max_norm:
        coef = max_norm / (norm + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad *= coef
    return norm


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear ramp over the first warmup_steps steps (step counts from 0), flat after"""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, (step + 1) / warmup_steps)
