"""Adam with per-component learning-rate groups and a one-cycle schedule.

The schedule is a cosine ramp from max_lr/div_factor up to max_lr over the
first pct_start of training, then a cosine anneal down to
max_lr/final_div_factor. Values are returned as multipliers of the base max
learning rate so groups can scale them independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ScheduleError

GROUP_IDS = ("fusion_proj", "attention", "head", "anfis")

# The classifier head group also covers the fuzzy stage's ablation replacement.
# Projections move slowly (Adam's per-coordinate steps on the big matrices
# otherwise churn the fused geometry faster than the tiny head can track);
# the ~100-parameter fuzzy stage tolerates a much hotter rate.
DEFAULT_LR_SCALES = {"fusion_proj": 0.05, "attention": 1.0, "head": 1.0, "anfis": 60.0}

_GROUP_PREFIXES = {
    "fusion.img_proj": "fusion_proj",
    "fusion.txt_proj": "fusion_proj",
    "fusion.attn": "attention",
    "fusion.head": "head",
    "anfis.": "anfis",
    "linear.": "anfis",
}


@dataclass
class ParamGroup:
    group_id: str
    lr_scale: float = 1.0

    def validate(self) -> None:
        if self.group_id not in GROUP_IDS:
            raise ConfigError(f"unknown group id {self.group_id!r}")
        if self.lr_scale <= 0.0:
            raise ConfigError(f"lr_scale must be positive, got {self.lr_scale}")


def assign_group(param_name: str) -> str:
    """Map a qualified parameter name to its learning-rate group."""
    for prefix, group in _GROUP_PREFIXES.items():
        if param_name.startswith(prefix):
            return group
    raise ConfigError(f"parameter {param_name!r} belongs to no group")


@dataclass
class ScheduleConfig:
    total_steps: int
    base_max_lr: float = 2e-3
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def validate(self) -> None:
        if self.total_steps < 2:
            raise ConfigError(f"total_steps must be >= 2, got {self.total_steps}")
        if not 0.0 < self.pct_start < 1.0:
            raise ConfigError(f"pct_start must lie in (0,1), got {self.pct_start}")
        if self.base_max_lr <= 0.0 or self.div_factor <= 1.0 or self.final_div_factor <= 1.0:
            raise ConfigError("base_max_lr must be > 0 and div factors > 1")


def onecycle_lr(step: int, cfg: ScheduleConfig) -> float:
    """Multiplier of base_max_lr at the given step, in (0, 1]."""
    cfg.validate()
    if step < 0 or step > cfg.total_steps:
        raise ScheduleError(f"step {step} outside [0, {cfg.total_steps}]")
    warmup = max(1, round(cfg.pct_start * cfg.total_steps))
    low, floor = 1.0 / cfg.div_factor, 1.0 / cfg.final_div_factor
    if step <= warmup:
        phase = step / warmup
        return low + (1.0 - low) * (1.0 - math.cos(math.pi * phase)) / 2.0
    phase = (step - warmup) / (cfg.total_steps - warmup)
    return floor + (1.0 - floor) * (1.0 + math.cos(math.pi * phase)) / 2.0


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lrs: dict[str, float],
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    projections: dict[str, object] | None = None,
) -> None:
    """One bias-corrected Adam update, in place, then constraint projections.

    Aborts (raising NumericError, touching nothing) if any gradient is
    non-finite, so a poisoned step cannot corrupt the state.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name!r}; step aborted")
        if params[name].shape != g.shape:
            raise ConfigError(f"gradient shape mismatch for {name!r}")

    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g**2
        lr = lrs[name] if isinstance(lrs, dict) else lrs
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    if projections:
        for name, proj in projections.items():
            if name in params:
                params[name][...] = proj(params[name])
