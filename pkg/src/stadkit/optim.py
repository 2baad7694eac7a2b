"""AdamW with decoupled weight decay, plus the step-decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    """Per-parameter first/second moment estimates and the step counter."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0


def init_adamw(params):
    return AdamWState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        step=0,
    )


def adamw_step(params, grads, state, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    """One AdamW update, in place on ``params``.

    Weight decay is decoupled: applied directly to the parameter, scaled
    by the learning rate, independent of the gradient moments. Raises on
    non-finite gradients so divergence stops the run instead of silently
    corrupting the moments.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError(
            f"parameter/gradient/state length mismatch: {len(params)}, {len(grads)}, {len(state.m)}"
        )
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {i}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= lr * weight_decay * p
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def lr_schedule(base_lr, epoch, milestones, factor=0.1):
    """Step decay: multiply by ``factor`` at each milestone already reached.

    ``epoch`` is zero-based; a milestone of 1 means the rate drops when
    epoch 1 begins. Milestones must be strictly increasing.
    """
    if base_lr <= 0:
        raise ValueError(f"base_lr must be positive, got {base_lr}")
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    ms = list(milestones)
    if any(b <= a for a, b in zip(ms, ms[1:])):
        raise ValueError(f"milestones must be strictly increasing, got {ms}")
    n_passed = sum(1 for m in ms if epoch >= m)
    return base_lr * factor**n_passed
