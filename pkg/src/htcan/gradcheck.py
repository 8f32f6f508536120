"""Finite-difference gradient checks for every differentiable op and both tiny networks.

All checks run in float64 with central differences of step ``1e-5``.
Op-level checks perturb every input element. Network checks cover each
parameter tensor twice: with a random-direction directional derivative
(every element at once) and with single-element derivatives at the
largest-gradient entry plus randomly sampled entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .pixel_ops import StereoPair, pixel_shuffle, pixel_unshuffle, window_partition, window_reverse
from .stage1 import Stage1Config, stage1_forward
from .stage1 import init_weights as init_stage1
from .stage2 import Stage2Config, simple_gate, stage2_forward
from .stage2 import init_weights as init_stage2
from .tensor import Tape, Tensor, backward, precision
from .training.losses import charbonnier_loss, mse_loss

STEP = 1e-5
OP_TOL = 1e-5
NET_TOL = 1e-4


@dataclass(frozen=True)
class GradResult:
    group: str
    name: str
    rel_error: float
    evaluations: int
    tol: float

    @property
    def ok(self) -> bool:
        return self.rel_error < self.tol


def rel_error(a, n) -> float:
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n)) / denom


def _analytic(loss_fn: Callable[[], Tensor], leaves: list[Tensor]) -> list[np.ndarray]:
    for t in leaves:
        t.requires_grad = True
    try:
        with Tape() as tape:
            loss = loss_fn()
        backward(loss, tape, leaves)
        return [t.grad.copy() for t in leaves]
    finally:
        for t in leaves:
            t.requires_grad = False
            t.grad = None


def _value(loss_fn) -> float:
    return float(loss_fn().item())


def _elementwise_fd(loss_fn, t: Tensor, flat_idx, h: float = STEP) -> np.ndarray:
    flat = t.data.reshape(-1)
    out = np.empty(len(flat_idx))
    for k, i in enumerate(flat_idx):
        orig = flat[i]
        flat[i] = orig + h
        up = _value(loss_fn)
        flat[i] = orig - h
        down = _value(loss_fn)
        flat[i] = orig
        out[k] = (up - down) / (2 * h)
    return out


def _directional_fd(loss_fn, t: Tensor, direction: np.ndarray, h: float = STEP) -> float:
    orig = t.data.copy()
    t.data[...] = orig + h * direction
    up = _value(loss_fn)
    t.data[...] = orig - h * direction
    down = _value(loss_fn)
    t.data[...] = orig
    return (up - down) / (2 * h)


# -- op level ------------------------------------------------------------------

def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    r = rng.standard_normal
    pos = lambda *s: rng.uniform(0.5, 2.0, size=s)  # noqa: E731
    away = lambda *s: np.sign(r(s)) * rng.uniform(0.2, 1.0, size=s)  # noqa: E731
    return {
        "add": (lambda a, b: ops.add(a, b), [r((2, 3, 4)), r((3, 1))]),
        "sub": (lambda a, b: ops.sub(a, b), [r((2, 3)), r((2, 3))]),
        "mul": (lambda a, b: ops.mul(a, b), [r((2, 3, 4)), r((1, 4))]),
        "div": (lambda a, b: ops.div(a, b), [r((2, 3)), pos(2, 3)]),
        "square": (ops.square, [r((3, 4))]),
        "sqrt": (ops.sqrt, [pos(3, 4)]),
        "sum": (lambda a: ops.sum(a, axis=(0, 2)), [r((2, 3, 4))]),
        "mean": (lambda a: ops.mean(a, axis=1, keepdims=True), [r((2, 3, 4))]),
        "matmul": (ops.matmul, [r((2, 3, 4)), r((4, 5))]),
        "matmul_batched": (ops.matmul_batched, [r((3, 2, 4)), r((3, 4, 2))]),
        "linear": (ops.linear, [r((2, 3, 4)), r((5, 4)), r((5,))]),
        "reshape": (lambda a: ops.reshape(a, (4, 6)), [r((2, 3, 4))]),
        "permute": (lambda a: ops.permute(a, (2, 0, 1)), [r((2, 3, 4))]),
        "transpose": (lambda a: ops.transpose(a, -1, -2), [r((2, 3, 4))]),
        "getitem": (lambda a: ops.getitem(a, (slice(None), slice(1, 3), 0)), [r((2, 4, 3))]),
        "concat": (lambda a, b: ops.concat([a, b], axis=1), [r((2, 3, 2)), r((2, 1, 2))]),
        "roll": (lambda a: ops.roll(a, (1, -2), (2, 3)), [r((1, 2, 4, 5))]),
        "pad2d": (lambda a: ops.pad2d(a, (1, 2, 0, 1)), [r((1, 2, 3, 3))]),
        "reflect_pad2d": (lambda a: ops.reflect_pad2d(a, (2, 1, 1, 2)), [r((1, 2, 4, 3))]),
        "take_rows": (lambda a: ops.take_rows(a, np.array([[0, 2], [2, 1], [0, 0]])), [r((3, 2))]),
        "extract_windows": (lambda a: ops.extract_windows(a, 4, 2, 1), [r((1, 2, 4, 6))]),
        "conv2d": (lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding=1),
                   [r((2, 3, 5, 4)), r((2, 3, 3, 3)), r((2,))]),
        "conv2d_strided_grouped": (lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1, groups=2),
                                   [r((1, 4, 5, 6)), r((6, 2, 3, 3)), r((6,))]),
        "conv2d_pointwise": (lambda x, w, b: ops.conv2d(x, w, b), [r((2, 3, 2, 3)), r((4, 3, 1, 1)), r((4,))]),
        "softmax_lastdim": (ops.softmax_lastdim, [r((3, 5))]),
        "layer_norm": (lambda x, g, b: ops.layer_norm(x, g, b), [r((2, 4, 3, 2)), r((4,)), r((4,))]),
        "layer_norm_lastdim": (lambda x, g, b: ops.layer_norm(x, g, b, axis=-1), [r((3, 5)), r((5,)), r((5,))]),
        "gelu": (lambda a: ops.activation(a, "gelu"), [r((3, 4))]),
        "silu": (lambda a: ops.activation(a, "silu"), [r((3, 4))]),
        "relu": (lambda a: ops.activation(a, "relu"), [away(3, 4)]),
        "sigmoid": (lambda a: ops.activation(a, "sigmoid"), [r((3, 4))]),
        "pixel_shuffle": (lambda a: pixel_shuffle(a, 2), [r((1, 8, 2, 3))]),
        "pixel_unshuffle": (lambda a: pixel_unshuffle(a, 2), [r((1, 2, 4, 6))]),
        "window_partition": (lambda a: window_partition(a, 2)[0], [r((1, 3, 4, 4))]),
        "window_reverse": (lambda a: window_reverse(a, (2, 2), 2, (1, 3, 4, 4)), [r((4, 4, 3))]),
        "simple_gate": (simple_gate, [r((1, 6, 2, 3))]),
        "charbonnier_loss": (lambda a, b: charbonnier_loss(a, b), [r((2, 3)), r((2, 3))]),
        "mse_loss": (mse_loss, [r((2, 3)), r((2, 3))]),
    }


def check_ops(seed: int = 0) -> list[GradResult]:
    """Every input element of every op, against ``sum(out * R)`` for a fixed random ``R``."""
    rng = np.random.default_rng(seed)
    results = []
    with precision(np.float64):
        for name, (fn, arrays) in _op_cases(rng).items():
            leaves = [Tensor(np.asarray(a, dtype=np.float64)) for a in arrays]
            probe = fn(*leaves)
            proj = Tensor(rng.standard_normal(probe.shape))

            def loss_fn(leaves=leaves, fn=fn, proj=proj):
                return ops.sum(ops.mul(fn(*leaves), proj))

            grads = _analytic(loss_fn, leaves)
            worst, evals = 0.0, 0
            for t, g in zip(leaves, grads):
                num = _elementwise_fd(loss_fn, t, range(t.data.size)).reshape(t.shape)
                evals += 2 * t.data.size
                worst = max(worst, rel_error(g, num))
            results.append(GradResult("op", name, worst, evals, OP_TOL))
    return results


# -- network level ---------------------------------------------------------------

def _randomise(store, rng: np.random.Generator, scale: float = 0.2) -> None:
    """Move every parameter off its (possibly zero) initial value so all paths carry gradient."""
    for name in store.names():
        t = store[name]
        t.data[...] = t.data + scale * rng.standard_normal(t.shape)


def check_parameters(group: str, loss_fn: Callable[[], Tensor], store, rng: np.random.Generator,
                     samples: int = 4, tol: float = NET_TOL) -> list[GradResult]:
    names = store.names()
    leaves = [store[n] for n in names]
    grads = _analytic(loss_fn, leaves)
    results = []
    for name, t, g in zip(names, leaves, grads):
        direction = rng.standard_normal(t.shape)
        num_dir = _directional_fd(loss_fn, t, direction)
        ana_dir = float(np.sum(g * direction))
        err = rel_error(ana_dir, num_dir)
        flat = np.abs(g).reshape(-1)
        picks = {int(np.argmax(flat))}
        picks.update(int(i) for i in rng.choice(flat.size, size=min(samples, flat.size), replace=False))
        picks = sorted(picks)
        num = _elementwise_fd(loss_fn, t, picks)
        err = max(err, rel_error(g.reshape(-1)[picks], num))
        results.append(GradResult(group, name, err, 2 + 2 * len(picks), tol))
    return results


def check_stage1(seed: int = 0, cfg: Stage1Config | None = None) -> list[GradResult]:
    cfg = cfg or Stage1Config.tiny()
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        W = init_stage1(cfg, seed, dtype=np.float64)
        _randomise(W, rng)
        x = Tensor(rng.random((1, cfg.in_channels, cfg.patch, cfg.patch)))
        target = Tensor(rng.random((1, cfg.img_channels, cfg.patch * cfg.scale, cfg.patch * cfg.scale)))

        def loss_fn():
            return mse_loss(stage1_forward(x, W, cfg), target)

        return check_parameters("stage1", loss_fn, W, rng)


def check_stage2(seed: int = 0, cfg: Stage2Config | None = None) -> list[GradResult]:
    cfg = cfg or Stage2Config.tiny()
    rng = np.random.default_rng(seed + 1)
    with precision(np.float64):
        W = init_stage2(cfg, seed, dtype=np.float64)
        _randomise(W, rng)
        u = cfg.unshuffle
        h, w = 4 * u, 6 * u
        pair = StereoPair(Tensor(rng.random((1, cfg.img_channels, h, w))), Tensor(rng.random((1, cfg.img_channels, h, w))))
        target = Tensor(rng.random((2, cfg.img_channels, h, w)))

        def loss_fn():
            out = stage2_forward(pair, W, cfg)
            return mse_loss(ops.concat([out.left, out.right], axis=0), target)

        return check_parameters("stage2", loss_fn, W, rng)


def run_all(seed: int = 0) -> list[GradResult]:
    return check_ops(seed) + check_stage1(seed) + check_stage2(seed)


def format_table(results: list[GradResult]) -> str:
    """Per-group summary plus every failing row."""
    lines = [f"{'group':<8} {'checks':>6} {'max rel err':>12} {'tol':>8}  status"]
    for group in dict.fromkeys(r.group for r in results):
        rows = [r for r in results if r.group == group]
        worst = max(r.rel_error for r in rows)
        ok = all(r.ok for r in rows)
        lines.append(f"{group:<8} {len(rows):>6} {worst:>12.3e} {rows[0].tol:>8.0e}  {'ok' if ok else 'FAIL'}")
    bad = [r for r in results if not r.ok]
    for r in bad:
        lines.append(f"  FAIL {r.group}:{r.name} rel err {r.rel_error:.3e}")
    if not math.isfinite(max((r.rel_error for r in results), default=0.0)):
        lines.append("  non-finite gradient error encountered")
    return "\n".join(lines)
