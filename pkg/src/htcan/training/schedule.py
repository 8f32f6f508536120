"""Learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import ConfigError, UsageError


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "multistep_half"
    init_lr: float = 2e-4
    milestones: tuple[int, ...] = field(default_factory=tuple)
    total_iters: int = 0
    min_lr: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.kind not in ("multistep_half", "cosine"):
            raise ConfigError(f"schedule kind must be multistep_half or cosine, got {self.kind!r}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError(f"milestones must be strictly increasing: {self.milestones}")
        if self.min_lr > self.init_lr or self.init_lr < 0 or self.min_lr < 0:
            raise ConfigError(f"need 0 <= min_lr <= init_lr, got {self.min_lr}, {self.init_lr}")
        if self.kind == "cosine" and self.total_iters < 1:
            raise ConfigError("cosine schedule needs total_iters >= 1")


def lr_at(it: int, s: LrSchedule) -> float:
    if it < 0:
        raise UsageError(f"iteration must be >= 0, got {it}")
    if s.kind == "multistep_half":
        passed = sum(1 for m in s.milestones if m <= it)
        return s.init_lr / (2 ** passed)
    if it == 0:
        return s.init_lr
    if it >= s.total_iters:
        return s.min_lr
    return s.min_lr + 0.5 * (s.init_lr - s.min_lr) * (1.0 + math.cos(math.pi * it / s.total_iters))
