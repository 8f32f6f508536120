"""End-to-end inference: stage 1 per view, stage 2 on the pair, optional stage 3, final blend.

Every intermediate stays in floating point; the single quantization to
8 bits happens when the result is written to PNG.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import stage1, stage2
from .config import PipelineConfig, StereoStage
from .ensemble import model_ensemble, model_ensemble_pairs, self_ensemble_mono, self_ensemble_stereo
from .errors import ShapeError
from .imageio import read_pair, write_png
from .pixel_ops import StereoPair
from .tensor import Tensor, precision
from .weights import WeightStore


@dataclass
class LoadedWeights:
    stage1: list[WeightStore]
    stage2: WeightStore | None = None
    stage3: WeightStore | None = None
    stage3_prefix: str = "stage3"


@dataclass
class PipelineResult:
    output: StereoPair
    stage1: StereoPair
    stage2: StereoPair | None = None
    stage3: StereoPair | None = None
    trace: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    def dataflow_table(self) -> str:
        rows = [f"{'step':<24} shape"] + [f"{label:<24} {tuple(shape)}" for label, shape in self.trace]
        return "\n".join(rows)


def _stage_prefix(W: WeightStore, preferred: str, fallback: str) -> str:
    names = W.names()
    if any(n.startswith(preferred + ".") for n in names):
        return preferred
    return fallback


def load_weights(cfg: PipelineConfig) -> LoadedWeights:
    cfg.check_files()
    dt = cfg.dtype
    s1 = []
    for m in cfg.members:
        W = WeightStore.load(m.weights, dtype=dt)
        stage1.check_weights(W, m.config)
        s1.append(W)
    out = LoadedWeights(s1)
    if cfg.stage2 is not None:
        out.stage2 = WeightStore.load(cfg.stage2.weights, dtype=dt)
        stage2.check_weights(out.stage2, cfg.stage2.config, "stage2")
    if cfg.stage3 is not None:
        W = WeightStore.load(cfg.stage3.weights, dtype=dt)
        # a stage-3 file may simply be a copy of stage-2 weights
        out.stage3_prefix = _stage_prefix(W, "stage3", "stage2")
        stage2.check_weights(W, cfg.stage3.config, out.stage3_prefix)
        out.stage3 = W
    return out


def _view(x, dtype) -> Tensor:
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    if a.ndim == 3:
        a = a[None]
    return Tensor(a.astype(dtype))


def run_stage1(pair: StereoPair, cfg: PipelineConfig, weights: list[WeightStore],
               trace: list | None = None) -> StereoPair:
    views = []
    for vi, x in enumerate((pair.left, pair.right)):
        x = _view(x, cfg.dtype)
        preds = []
        for mi, (m, W) in enumerate(zip(cfg.members, weights)):
            box = [trace if (vi == 0 and mi == 0) else None]

            def f(inp, m=m, W=W, box=box):
                # only the first call (identity transform) is traced
                t, box[0] = box[0], None
                return stage1.stage1_superresolve_image(inp, W, m.config, cfg.tiling, trace=t)

            y = self_ensemble_mono(f, x) if cfg.stage1_self_ensemble else f(x)
            preds.append(y.data)
        views.append(model_ensemble(preds, cfg.stage1_spec.weights))
    out = StereoPair(*views)
    if trace is not None:
        trace.append(("stage1.ensembled", out.left.shape))
    return out


def run_stereo_stage(pair: StereoPair, st: StereoStage, W: WeightStore, prefix: str, dtype,
                     trace: list | None = None) -> StereoPair:
    inp = StereoPair(_view(pair.left, dtype), _view(pair.right, dtype))
    box = [trace]

    def g(p: StereoPair) -> StereoPair:
        t, box[0] = box[0], None
        try:
            return stage2.stage2_forward(p, W, st.config, prefix=prefix, pad=True, trace=t)
        except ShapeError as exc:
            raise ShapeError(f"{prefix}: {exc}") from exc

    if st.self_ensemble:
        return self_ensemble_stereo(g, inp, include_swap=st.include_swap)
    out = g(inp)
    return StereoPair(out.left.data, out.right.data)


def run_pipeline(pair: StereoPair, cfg: PipelineConfig, weights: LoadedWeights | None = None) -> PipelineResult:
    """Run the configured stages on an LR pair of ``(1, 3, h, w)`` views in [0, 1]."""
    weights = weights or load_weights(cfg)
    trace: list = [("input", _view(pair.left, cfg.dtype).shape)]
    with precision(cfg.dtype):
        s1 = run_stage1(pair, cfg, weights.stage1, trace)
        result = PipelineResult(output=s1, stage1=s1, trace=trace)
        if cfg.stage2 is None:
            return result
        s2 = run_stereo_stage(s1, cfg.stage2, weights.stage2, "stage2", cfg.dtype, trace)
        result.stage2 = result.output = s2
        if cfg.stage3 is None:
            return result
        s3 = run_stereo_stage(s2, cfg.stage3, weights.stage3, weights.stage3_prefix, cfg.dtype, trace)
        result.stage3 = s3
        result.output = model_ensemble_pairs([s2, s3], cfg.final_spec.weights)
        trace.append(("final", result.output.left.shape))
    return result


def run_pipeline_files(left: str | os.PathLike, right: str | os.PathLike, out_left: str | os.PathLike,
                       out_right: str | os.PathLike, cfg: PipelineConfig) -> PipelineResult:
    weights = load_weights(cfg)
    result = run_pipeline(read_pair(left, right, cfg.dtype), cfg, weights)
    write_png(out_left, result.output.left)
    write_png(out_right, result.output.right)
    return result


def perturb(W: WeightStore, rng: np.random.Generator, std: float) -> WeightStore:
    """Add Gaussian noise to every parameter, giving non-identity branches."""
    out = W.copy()
    for name in out.names():
        d = out[name].data
        out[name] = Tensor((d + std * rng.standard_normal(d.shape)).astype(d.dtype))
    return out


def init_pipeline_weights(cfg: PipelineConfig, seed: int = 0, noise: float = 0.0) -> LoadedWeights:
    """Deterministic initial weights for every configured stage.

    Stage 3 starts as a copy of stage 2. With ``noise`` > 0 each store is
    perturbed with its own stream so the stages stop being identities.
    """
    n = len(cfg.members) + 2
    ss = np.random.SeedSequence(seed).spawn(n)
    int_seeds = [int(s.generate_state(1)[0]) for s in ss]
    rngs = [np.random.default_rng(s) for s in ss]

    def maybe(W, i):
        return perturb(W, rngs[i], noise) if noise > 0 else W

    out = LoadedWeights([maybe(stage1.init_weights(m.config, int_seeds[i], dtype=cfg.dtype), i)
                         for i, m in enumerate(cfg.members)])
    if cfg.stage2 is not None:
        base = stage2.init_weights(cfg.stage2.config, int_seeds[-2], "stage2", dtype=cfg.dtype)
        out.stage2 = maybe(base, n - 2)
        if cfg.stage3 is not None:
            out.stage3 = maybe(base.renamed("stage2", "stage3"), n - 1)
    return out


def save_weights(cfg: PipelineConfig, weights: LoadedWeights) -> list[str]:
    """Write each store to the path the config names for it."""
    written = []
    pairs = list(zip([m.weights for m in cfg.members], weights.stage1))
    if cfg.stage2 is not None:
        pairs.append((cfg.stage2.weights, weights.stage2))
    if cfg.stage3 is not None:
        pairs.append((cfg.stage3.weights, weights.stage3))
    for path, W in pairs:
        path.parent.mkdir(parents=True, exist_ok=True)
        W.save(path)
        written.append(str(path))
    return written
