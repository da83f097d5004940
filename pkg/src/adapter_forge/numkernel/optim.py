"""AdamW with decoupled weight decay and a warmup + cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..errors import ConfigError, NonFiniteError
from .params import ParamStore


@dataclass(frozen=True)
class ScheduleConfig:
    peak_lr: float = 1e-4
    warmup_steps: int = 840
    total_steps: int = 28000
    floor_lr: float = 0.0

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError("need 0 <= warmup_steps <= total_steps")
        if self.floor_lr > self.peak_lr:
            raise ConfigError("floor_lr must not exceed peak_lr")


FULL_SCHEDULE = ScheduleConfig(1e-4, 840, 28000, 0.0)
# same 3% warmup fraction as the full-scale recipe, larger peak for tiny models
DESK_SCHEDULE = ScheduleConfig(3e-3, 60, 2000, 1e-5)


def lr_at_step(cfg: ScheduleConfig, step: int) -> float:
    """Linear ramp to ``peak_lr``, then cosine decay to ``floor_lr``.

    Steps past ``total_steps`` are clamped to the floor.
    """
    if step > cfg.total_steps:
        return cfg.floor_lr
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    if cfg.total_steps == cfg.warmup_steps:
        return cfg.peak_lr
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.floor_lr + (cfg.peak_lr - cfg.floor_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)


def adamw_step(store: ParamStore, state: AdamWState, lr: float, betas=(0.9, 0.999),
               eps: float = 1e-8, weight_decay: float = 0.01) -> AdamWState:
    """One AdamW update of every trainable entry, in place.

    The whole step is rejected (nothing modified) if any gradient is
    non-finite.
    """
    if lr < 0:
        raise ConfigError("learning rate must be non-negative")
    entries = list(store.items(trainable_only=True))
    bad = [n for n, e in entries if e.values.grad is not None and not torch.isfinite(e.values.grad).all()]
    if bad:
        raise NonFiniteError(f"non-finite gradient in {bad[:5]}; step rejected")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    with torch.no_grad():
        for name, e in entries:
            p, g = e.values, e.grad
            m = state.exp_avg.get(name)
            if m is None:
                m = state.exp_avg[name] = torch.zeros_like(p)
                state.exp_avg_sq[name] = torch.zeros_like(p)
            v = state.exp_avg_sq[name]
            p.mul_(1.0 - lr * weight_decay)
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / c2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr / c1)
    return state
