"""Desk-scale training loop for the three stages.

Stage 1 learns LR multi-patch -> HR patch. Stage 2 learns to enhance the
self-ensembled stage-1 outputs of both views. Stage 3 starts from the stage-2
weights and learns on the stereo self-ensembled stage-2 outputs.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .. import ops
from ..ensemble import self_ensemble_mono, self_ensemble_stereo
from ..errors import ConfigError, UsageError
from ..pixel_ops import StereoPair, _blocks_to_channels, pad_for_multi_patch
from ..stage1 import Stage1Config, Tiling, stage1_forward, stage1_superresolve_image
from ..stage1 import check_weights as check_stage1
from ..stage1 import init_weights as init_stage1
from ..stage2 import Stage2Config, stage2_forward
from ..stage2 import check_weights as check_stage2
from ..stage2 import init_weights as init_stage2
from ..tensor import Tape, Tensor, backward, no_record
from ..weights import WeightStore
from .augment import AugmentConfig, TrainSample, augment
from .data import StereoDataset, SyntheticSpec, synthetic_dataset
from .losses import CHARBONNIER_EPS, charbonnier_loss, mse_loss
from .optim import OptimConfig, OptimState, optimizer_step
from .schedule import LrSchedule, lr_at


@dataclass(frozen=True)
class StageTrainConfig:
    """Optimisation settings for one stage.

    ``patch`` is the LR patch side for stage 1 and the ``(h, w)`` crop of the
    stage input for stages 2 and 3. The loss switches from Charbonnier to MSE
    at ``switch_iter`` (never when ``None``).
    """

    iters: int = 300
    batch: int = 4
    patch: tuple[int, ...] = (8,)
    optim: OptimConfig = OptimConfig()
    schedule: LrSchedule = LrSchedule(init_lr=2e-3)
    augment: AugmentConfig = AugmentConfig()
    switch_iter: int | None = None
    charbonnier_eps: float = CHARBONNIER_EPS
    fixed_batch: bool = False

    def __post_init__(self):
        object.__setattr__(self, "patch", tuple(int(p) for p in self.patch))
        if self.iters < 0 or self.batch < 1:
            raise ConfigError(f"need iters >= 0 and batch >= 1, got {self.iters}, {self.batch}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StageTrainConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training field(s): {', '.join(sorted(unknown))}")
        if "optim" in data:
            data["optim"] = OptimConfig(**data["optim"])
        if "schedule" in data:
            data["schedule"] = LrSchedule(**data["schedule"])
        if "augment" in data:
            data["augment"] = AugmentConfig(**data["augment"])
        return cls(**data)

    def with_iters(self, iters: int) -> "StageTrainConfig":
        sched = self.schedule
        if sched.kind == "cosine":
            sched = dataclasses.replace(sched, total_iters=max(iters, 1))
        switch = self.switch_iter
        if switch is not None and self.iters:
            switch = round(switch * iters / self.iters)
        return dataclasses.replace(self, iters=iters, schedule=sched, switch_iter=switch)


STAGE1_TOY = StageTrainConfig(
    iters=300, batch=4, patch=(8,), optim=OptimConfig("adam", 0.9, 0.99),
    schedule=LrSchedule("multistep_half", 2e-3, (200, 250)), augment=AugmentConfig.stage1(), switch_iter=240)
STAGE2_TOY = StageTrainConfig(
    iters=300, batch=2, patch=(16, 48), optim=OptimConfig("adamw", 0.9, 0.9),
    schedule=LrSchedule("cosine", 1e-3, total_iters=300, min_lr=1e-7), augment=AugmentConfig.stage2(), switch_iter=240)
STAGE3_TOY = STAGE2_TOY.with_iters(100)


@dataclass(frozen=True)
class ToyTrainConfig:
    data: SyntheticSpec = SyntheticSpec()
    stage1_model: Stage1Config = Stage1Config.tiny()
    stage2_model: Stage2Config = Stage2Config.tiny()
    stage1: StageTrainConfig = STAGE1_TOY
    stage2: StageTrainConfig = STAGE2_TOY
    stage3: StageTrainConfig = STAGE3_TOY
    smoothing: int = 20

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ToyTrainConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training config field(s): {', '.join(sorted(unknown))}")
        out: dict[str, Any] = {}
        if "data" in data:
            out["data"] = SyntheticSpec(**data["data"])
        if "stage1_model" in data:
            out["stage1_model"] = Stage1Config.from_dict(data["stage1_model"])
        if "stage2_model" in data:
            out["stage2_model"] = Stage2Config.from_dict(data["stage2_model"])
        for k in ("stage1", "stage2", "stage3"):
            if k in data:
                out[k] = StageTrainConfig.from_dict(data[k])
        if "smoothing" in data:
            out["smoothing"] = int(data["smoothing"])
        return cls(**out)

    def stage(self, k: int) -> StageTrainConfig:
        return {1: self.stage1, 2: self.stage2, 3: self.stage3}[k]


@dataclass(frozen=True)
class TraceRow:
    iter: int
    lr: float
    loss: float
    loss_kind: str


@dataclass
class TrainResult:
    stage: int
    weights: WeightStore
    trace: list[TraceRow]
    upstream: dict[int, WeightStore] = field(default_factory=dict)

    def losses(self, kind: str | None = None) -> np.ndarray:
        return np.array([r.loss for r in self.trace if kind is None or r.loss_kind == kind])

    def descent_ratio(self, window: int = 20, kind: str = "charbonnier") -> float:
        """Mean loss over the last ``window`` iterations of a loss phase over its first ``window``."""
        vals = self.losses(kind)
        if len(vals) < 2 * window:
            raise UsageError(f"need {2 * window} '{kind}' iterations to measure descent, have {len(vals)}")
        return float(vals[-window:].mean() / vals[:window].mean())

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "lr", "loss"])
            for r in self.trace:
                wr.writerow([r.iter, repr(r.lr), repr(r.loss)])


def smooth(values, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries average what is available."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(v)
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i - window + 1)
        out[i] = (c[i] - (c[lo - 1] if lo else 0.0)) / (i - lo + 1)
    return out


# -- generic fit ---------------------------------------------------------------

def fit(weights: WeightStore, forward: Callable[[Any], Tensor], batches: Callable[[int], tuple[Any, np.ndarray]],
        tc: StageTrainConfig) -> list[TraceRow]:
    """Run ``tc.iters`` optimiser steps; ``batches(i)`` yields ``(inputs, target)``."""
    state = OptimState()
    names = weights.names()
    trace = []
    weights.requires_grad_(True)
    try:
        for it in range(tc.iters):
            lr = lr_at(it, tc.schedule)
            inputs, target = batches(it)
            use_mse = tc.switch_iter is not None and it >= tc.switch_iter
            with Tape() as tape:
                pred = forward(inputs)
                if use_mse:
                    loss = mse_loss(pred, Tensor(target))
                else:
                    loss = charbonnier_loss(pred, Tensor(target), tc.charbonnier_eps)
            backward(loss, tape, weights.parameters())
            grads = {n: weights[n].grad for n in names}
            optimizer_step(weights, grads, state, tc.optim, lr)
            trace.append(TraceRow(it, lr, float(loss.item()), "mse" if use_mse else "charbonnier"))
    finally:
        weights.requires_grad_(False)
        for t in weights.parameters():
            t.grad = None
    return trace


def _batch_source(make: Callable[[np.random.Generator], Any], rng: np.random.Generator, fixed: bool):
    if fixed:
        first = make(rng)
        return lambda it: first
    return lambda it: make(rng)


# -- stage 1 ---------------------------------------------------------------------

def _stage1_batches(ds: StereoDataset, cfg: Stage1Config, tc: StageTrainConfig, rng: np.random.Generator):
    p, s = cfg.patch, cfg.scale
    views = [(lr_v, hr_v) for lr, hr in zip(ds.lr, ds.hr) for lr_v, hr_v in ((lr.left, hr.left), (lr.right, hr.right))]
    padded = [pad_for_multi_patch(v[None], p)[0] if cfg.multi_patch else v for v, _ in views]

    def make(rng):
        samples = []
        for _ in range(tc.batch):
            i = int(rng.integers(len(views)))
            lr_v, hr_v = views[i]
            y = int(rng.integers(lr_v.shape[1] - p + 1))
            x = int(rng.integers(lr_v.shape[2] - p + 1))
            if cfg.multi_patch:
                region = padded[i][:, y:y + 3 * p, x:x + 3 * p]
            else:
                region = lr_v[:, y:y + p, x:x + p]
            samples.append(TrainSample(region, hr_v[:, y * s:(y + p) * s, x * s:(x + p) * s]))
        out = [augment(smp, tc.augment, rng, partner=samples[j - 1] if len(samples) > 1 else None)
               for j, smp in enumerate(samples)]
        lr_b = np.stack([o.lr for o in out])
        if cfg.multi_patch:
            lr_b = _blocks_to_channels(lr_b, p)
        return lr_b, np.stack([o.hr for o in out])

    return _batch_source(make, rng, tc.fixed_batch)


def stage1_outputs(ds: StereoDataset, W: WeightStore, cfg: Stage1Config, self_ensemble: bool = True,
                   prefix: str = "stage1") -> list[StereoPair]:
    """Stage-1 SR of every LR view, optionally averaged over the dihedral group."""
    def sr(img):
        return stage1_superresolve_image(img, W, cfg, Tiling(), prefix)

    out = []
    with no_record():
        for pair in ds.lr:
            def one(v):
                x = Tensor(v[None])
                y = self_ensemble_mono(sr, x) if self_ensemble else sr(x)
                return y.data[0].astype(v.dtype)
            out.append(pair.map(one))
    return out


# -- stages 2 and 3 ----------------------------------------------------------------

def _stereo_batches(inputs: list[StereoPair], targets: list[StereoPair], tc: StageTrainConfig,
                    rng: np.random.Generator):
    ph, pw = tc.patch if len(tc.patch) == 2 else (tc.patch[0], tc.patch[0])

    def make(rng):
        out = []
        for _ in range(tc.batch):
            i = int(rng.integers(len(inputs)))
            h, w = inputs[i].left.shape[1:]
            if ph > h or pw > w:
                raise ConfigError(f"crop {ph}x{pw} exceeds stage input {h}x{w}")
            y, x = int(rng.integers(h - ph + 1)), int(rng.integers(w - pw + 1))
            crop = lambda v: v[:, y:y + ph, x:x + pw]  # noqa: E731
            smp = TrainSample(inputs[i].map(crop), targets[i].map(crop))
            out.append(augment(smp, tc.augment, rng, partner=None))
        lrs = StereoPair(np.stack([o.lr.left for o in out]), np.stack([o.lr.right for o in out]))
        hrs = np.concatenate([np.stack([o.hr.left for o in out]), np.stack([o.hr.right for o in out])])
        return lrs, hrs

    return _batch_source(make, rng, tc.fixed_batch)


def stereo_forward(W: WeightStore, cfg: Stage2Config, prefix: str) -> Callable[[StereoPair], Tensor]:
    def fwd(pair: StereoPair) -> Tensor:
        out = stage2_forward(pair, W, cfg, prefix)
        return ops.concat([out.left, out.right], axis=0)
    return fwd


def _np(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def stage2_outputs(inputs: list[StereoPair], W: WeightStore, cfg: Stage2Config, self_ensemble: bool = True,
                   prefix: str = "stage2") -> list[StereoPair]:
    def g(pair):
        return stage2_forward(StereoPair(Tensor(pair.left), Tensor(pair.right)), W, cfg, prefix, pad=True)

    out = []
    with no_record():
        for pair in inputs:
            batched = pair.map(lambda v: v[None])
            res = self_ensemble_stereo(g, batched) if self_ensemble else g(batched)
            out.append(StereoPair(_np(res.left)[0].astype(pair.left.dtype), _np(res.right)[0].astype(pair.right.dtype)))
    return out


# -- entry point -------------------------------------------------------------------

def _seeds(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]


def train_toy(stage: int, cfg: ToyTrainConfig = ToyTrainConfig(), iters: int | None = None, seed: int = 0,
              upstream: Mapping[int, WeightStore] | None = None, dataset: StereoDataset | None = None) -> TrainResult:
    """Train one stage on synthetic pairs, training missing upstream stages first.

    ``upstream`` may supply already-trained weights for earlier stages
    (``{1: stage1_weights, 2: stage2_weights}``). ``iters`` overrides the
    iteration count of the requested stage only.
    """
    if stage not in (1, 2, 3):
        raise UsageError(f"stage must be 1, 2 or 3, got {stage}")
    ds = dataset if dataset is not None else synthetic_dataset(cfg.data)
    ups: dict[int, WeightStore] = dict(upstream or {})
    tc = cfg.stage(stage)
    if iters is not None:
        tc = tc.with_iters(iters)
    rngs = _seeds(seed)
    int_seed = int(rngs[0].integers(2 ** 31))

    if stage == 1:
        W = init_stage1(cfg.stage1_model, int_seed)
        fwd = lambda x: stage1_forward(Tensor(x), W, cfg.stage1_model)  # noqa: E731
        trace = fit(W, fwd, _stage1_batches(ds, cfg.stage1_model, tc, rngs[1]), tc)
        return TrainResult(1, W, trace, ups)

    if 1 not in ups:
        ups[1] = train_toy(1, cfg, seed=seed, dataset=ds).weights
    check_stage1(ups[1], cfg.stage1_model)
    s1 = stage1_outputs(ds, ups[1], cfg.stage1_model)

    if stage == 2:
        W = init_stage2(cfg.stage2_model, int_seed + 1, prefix="stage2")
        trace = fit(W, stereo_forward(W, cfg.stage2_model, "stage2"), _stereo_batches(s1, ds.hr, tc, rngs[2]), tc)
        return TrainResult(2, W, trace, ups)

    if 2 not in ups:
        ups[2] = train_toy(2, cfg, seed=seed, upstream={1: ups[1]}, dataset=ds).weights
    check_stage2(ups[2], cfg.stage2_model, "stage2")
    s2 = stage2_outputs(s1, ups[2], cfg.stage2_model)
    W = ups[2].renamed("stage2", "stage3")
    trace = fit(W, stereo_forward(W, cfg.stage2_model, "stage3"), _stereo_batches(s2, ds.hr, tc, rngs[3]), tc)
    return TrainResult(3, W, trace, ups)
