"""AdamW with a linear warmup/decay schedule, two parameter groups, and
gradient accumulation.

Decoupled weight decay is applied to weight matrices only; biases and
layer-norm parameters (names whose last component is ``b`` or ``g``) are
exempt. The learning-rate schedule is isolated in ``lr_at`` so the
post-warmup shape can be swapped without touching the update rule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .encoder import GROUP_HEAD, ParameterSet
from .errors import ConfigError, ContractError

GradMap = dict[str, np.ndarray]


def lr_at(step: int, total_steps: int, base_lr: float, warmup_prop: float) -> float:
    """Linear ramp 0 -> base_lr over warmup_prop*total_steps, then linear
    decay base_lr -> 0 at total_steps. Continuous and piecewise linear."""
    if not 0.0 < warmup_prop < 1.0:
        raise ConfigError(f"warmup_prop must be in (0, 1), got {warmup_prop}")
    if total_steps <= 0:
        raise ConfigError(f"total_steps must be positive, got {total_steps}")
    if step < 0:
        raise ConfigError(f"step must be >= 0, got {step}")
    if step > total_steps:
        warnings.warn(
            f"lr_at: step {step} beyond total_steps {total_steps}; clamping to 0",
            stacklevel=2,
        )
        return 0.0
    warmup_steps = warmup_prop * total_steps
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


_NO_DECAY_SUFFIXES = {"b", "g", "bq", "bk", "bv", "bo", "b1", "b2"}


def decay_applies(name: str) -> bool:
    """Weight matrices decay; biases and layer-norm gains/offsets do not."""
    return name.rsplit(".", 1)[-1] not in _NO_DECAY_SUFFIXES


@dataclass
class OptimState:
    """Moments, step counter and hyperparameters for one training run."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int
    total_steps: int
    warmup_prop: float
    lr_encoder: float
    lr_head: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def init(cls, params: ParameterSet, total_steps: int, lr_encoder: float,
             lr_head: float, warmup_prop: float = 0.1, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8,
             weight_decay: float = 0.01) -> "OptimState":
        return cls(
            m={n: np.zeros_like(t.data) for n, t in params.items()},
            v={n: np.zeros_like(t.data) for n, t in params.items()},
            t=0,
            total_steps=total_steps,
            warmup_prop=warmup_prop,
            lr_encoder=lr_encoder,
            lr_head=lr_head,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            weight_decay=weight_decay,
        )

    def base_lr(self, group: str) -> float:
        return self.lr_head if group == GROUP_HEAD else self.lr_encoder


def adamw_step(params: ParameterSet, grads: GradMap, state: OptimState) -> float:
    """One decoupled-weight-decay Adam update, in place.

    Group learning rate is ``lr_at`` of the post-increment step counter, so
    the first step trains at a nonzero (partially warmed) rate. Returns the
    encoder-group learning rate used, for metrics.
    """
    if set(grads) != set(params.names()):
        missing = set(params.names()) - set(grads)
        extra = set(grads) - set(params.names())
        raise ContractError(
            f"gradient names do not match parameters: missing={sorted(missing)}, "
            f"extra={sorted(extra)}"
        )
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    lr_used = {}
    for name, tensor in params.items():
        g = grads[name]
        lr = lr_at(t, state.total_steps, state.base_lr(params.group(name)),
                   state.warmup_prop)
        lr_used[params.group(name)] = lr
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        tensor.data -= lr * update
        if state.weight_decay > 0.0 and decay_applies(name):
            tensor.data -= lr * state.weight_decay * tensor.data
    return lr_used.get("encoder", 0.0)


def accumulate(micro_grads: list[GradMap], n_accum: int | None = None) -> GradMap:
    """Elementwise mean of micro-batch gradient maps."""
    if not micro_grads:
        raise ContractError("accumulate: no gradient maps given")
    if n_accum is not None and len(micro_grads) != n_accum:
        raise ContractError(
            f"accumulate: expected {n_accum} gradient maps, got {len(micro_grads)}"
        )
    names = set(micro_grads[0])
    for g in micro_grads[1:]:
        if set(g) != names:
            raise ContractError("accumulate: gradient maps have different name sets")
    k = len(micro_grads)
    return {
        name: sum(g[name] for g in micro_grads) / k
        for name in micro_grads[0]
    }
