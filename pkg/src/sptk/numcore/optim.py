"""AdamW with decoupled weight decay, gradient clipping, and the LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sptk.errors import ConfigError, ContractError
from sptk.numcore.tensor import Tensor


@dataclass
class LRSchedule:
    """Linear warmup to peak_lr, then linear decay back to zero."""

    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not (0 < self.warmup_steps < self.total_steps):
            raise ConfigError(
                f"need 0 < warmup_steps < total_steps, got "
                f"{self.warmup_steps}/{self.total_steps}"
            )
        if self.peak_lr <= 0:
            raise ConfigError("peak_lr must be positive")


def lr_at_step(sched: LRSchedule, step: int) -> float:
    if not 0 <= step <= sched.total_steps:
        raise ContractError(f"step {step} outside [0, {sched.total_steps}]")
    if step <= sched.warmup_steps:
        return sched.peak_lr * step / sched.warmup_steps
    return sched.peak_lr * (sched.total_steps - step) / (
        sched.total_steps - sched.warmup_steps
    )


@dataclass
class OptimizerState:
    """Per-parameter Adam moments; parameters are identified by list position."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-6
    weight_decay: float = 0.01


def init_optimizer_state(
    params: list[Tensor],
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-6,
    weight_decay: float = 0.01,
) -> OptimizerState:
    return OptimizerState(
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
        step=0,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        weight_decay=weight_decay,
    )


def adamw_step(params: list[Tensor], grads: list, state: OptimizerState, lr: float) -> None:
    """One decoupled-weight-decay Adam update; increments state.step.

    A None gradient is treated as zero (the parameter still decays).
    """
    if len(params) != len(state.m):
        raise ContractError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = grads[i]
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        if state.weight_decay:
            update += state.weight_decay * p.data
        update *= lr
        p.data -= update.astype(p.data.dtype, copy=False)


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all .grad arrays in place so their global L2 norm is <= max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = total ** 0.5
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(factor)
    return norm
