"""Training losses built from differentiable ops."""

from __future__ import annotations

from .. import ops
from ..errors import ShapeError, UsageError
from ..tensor import Tensor

CHARBONNIER_EPS = 1e-3


def _check(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"loss: prediction {pred.shape} and target {target.shape} differ")


def charbonnier_loss(pred, target, eps: float = CHARBONNIER_EPS) -> Tensor:
    """Mean of ``sqrt((pred - target)^2 + eps^2)``."""
    if eps <= 0:
        raise UsageError(f"charbonnier eps must be positive, got {eps}")
    pred, target = ops._wrap(pred), ops._wrap(target)
    _check(pred, target)
    d = ops.sub(pred, target)
    return ops.mean(ops.sqrt(ops.add(ops.square(d), eps * eps)))


def mse_loss(pred, target) -> Tensor:
    pred, target = ops._wrap(pred), ops._wrap(target)
    _check(pred, target)
    return ops.mean(ops.square(ops.sub(pred, target)))


def loss_by_name(name: str):
    if name == "charbonnier":
        return charbonnier_loss
    if name == "mse":
        return mse_loss
    raise UsageError(f"unknown loss {name!r}")
