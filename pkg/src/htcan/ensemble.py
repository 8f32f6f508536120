"""Test-time self-ensembles and weighted model ensembles.

All averaging happens in float64 with a fixed summation order; outputs are
only quantised to 8 bits once, at file-write time (:func:`quantize`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, UsageError
from .pixel_ops import StereoPair, apply_geom, mono_group, stereo_group
from .tensor import Tensor

WEIGHT_SUM_TOL = 1e-6


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def parse_weight(text) -> float:
    """Parse ``"1/7"``, ``"0.25"`` or a number into a float."""
    if isinstance(text, (int, float)):
        return float(text)
    try:
        return float(Fraction(str(text).strip()))
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"cannot parse ensemble weight {text!r}") from None


@dataclass
class EnsembleSpec:
    """Named prediction sources with non-negative weights summing to one."""

    members: list[tuple[str, float]] = field(default_factory=list)

    def __post_init__(self):
        self.members = [(str(k), parse_weight(w)) for k, w in self.members]
        self.validate()

    def validate(self) -> None:
        if not self.members:
            raise UsageError("an ensemble needs at least one member")
        weights = [w for _, w in self.members]
        if any(w < 0 for w in weights):
            raise UsageError(f"ensemble weights must be non-negative, got {weights}")
        if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOL:
            raise UsageError(f"ensemble weights must sum to 1 (got {sum(weights):.9f})")

    @property
    def sources(self) -> list[str]:
        return [k for k, _ in self.members]

    @property
    def weights(self) -> list[float]:
        return [w for _, w in self.members]


def model_ensemble(preds: Sequence, weights: Sequence) -> np.ndarray:
    """Pointwise weighted mean of same-shaped predictions, in float64."""
    if len(preds) != len(weights) or not preds:
        raise UsageError(f"got {len(preds)} predictions for {len(weights)} weights")
    spec = EnsembleSpec([(str(i), w) for i, w in enumerate(weights)])
    arrays = [_arr(p) for p in preds]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise UsageError(f"ensemble members differ in shape: {shape} vs {a.shape}")
    acc = np.zeros(shape, dtype=np.float64)
    for a, w in zip(arrays, spec.weights):
        acc += w * a.astype(np.float64)
    return acc


def model_ensemble_pairs(preds: Sequence[StereoPair], weights: Sequence) -> StereoPair:
    return StereoPair(model_ensemble([p.left for p in preds], weights),
                      model_ensemble([p.right for p in preds], weights))


def tree_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Sum in a fixed pairwise tree; eight equal terms sum exactly to 8x."""
    level = list(arrays)
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def self_ensemble_mono(f: Callable, x, group=None) -> Tensor:
    """Average ``inverse(t)(f(t(x)))`` over the eight dihedral transforms."""
    group = group or mono_group()
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    outs = []
    for t in group:
        y = _arr(apply_geom(_arr(f(apply_geom(x, t))), t.inverse())).astype(np.float64)
        if outs and y.shape != outs[0].shape:
            raise ContractError(f"f output shape {y.shape} under {t} differs from {outs[0].shape}")
        outs.append(y)
    return Tensor(tree_sum(outs) / len(group))


def self_ensemble_stereo(g: Callable[[StereoPair], StereoPair], pair: StereoPair,
                         include_swap: bool = True) -> StereoPair:
    """Average over the flip/flip/view-swap group, mapping each output back."""
    group = stereo_group(include_swap)
    lefts, rights = [], []
    for t in group:
        out = g(apply_geom(pair, t))
        back = apply_geom(StereoPair(_arr(out.left), _arr(out.right)), t.inverse())
        yl, yr = _arr(back.left).astype(np.float64), _arr(back.right).astype(np.float64)
        if lefts and yl.shape != lefts[0].shape:
            raise ContractError(f"g output shape {yl.shape} under {t} differs from {lefts[0].shape}")
        lefts.append(yl)
        rights.append(yr)
    return StereoPair(tree_sum(lefts) / len(group), tree_sum(rights) / len(group))


def quantize(x) -> np.ndarray:
    """Clip to [0, 1] and round half away from zero onto 0..255."""
    a = np.clip(_arr(x).astype(np.float64), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5).astype(np.uint8)


def dequantize(q: np.ndarray) -> np.ndarray:
    return q.astype(np.float64) / 255.0
