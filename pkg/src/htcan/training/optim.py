"""Adam and AdamW with bias correction, updating a WeightStore in place."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..weights import WeightStore


@dataclass(frozen=True)
class OptimConfig:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0
    eps: float = 1e-8
    clip_norm: float | None = None

    def __post_init__(self):
        if self.kind not in ("adam", "adamw"):
            raise ConfigError(f"optimizer kind must be adam or adamw, got {self.kind!r}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("eps must be positive and weight_decay non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive when set")


@dataclass
class OptimState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def optimizer_step(params: WeightStore, grads: dict[str, np.ndarray], state: OptimState,
                   cfg: OptimConfig, lr: float) -> tuple[WeightStore, OptimState]:
    """One bias-corrected adaptive-moment step over the parameters named in ``grads``.

    AdamW first shrinks each parameter by ``lr * weight_decay * param``.
    """
    state.step += 1
    t = state.step
    scale = 1.0
    if cfg.clip_norm is not None:
        norm = global_norm(grads)
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        p = params[name].data
        g = g * scale if scale != 1.0 else g
        if cfg.kind == "adamw" and cfg.weight_decay:
            p -= lr * cfg.weight_decay * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.dtype)
    return params, state
