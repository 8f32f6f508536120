"""Vectorised kernels compared against the scalar-loop oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics, ops, oracles
from .pixel_ops import multi_patch_assemble
from .stage1 import window_attention
from .stage2 import scam_forward
from .tensor import Tensor, precision
from .training.optim import OptimConfig, OptimState, optimizer_step
from .weights import WeightStore


@dataclass(frozen=True)
class OracleResult:
    name: str
    max_abs_diff: float
    tol: float
    cases: int

    @property
    def ok(self) -> bool:
        return self.max_abs_diff < self.tol or self.max_abs_diff == self.tol == 0.0


def conv2d_cases(rng: np.random.Generator, cases: int = 50, dtype=np.float32) -> OracleResult:
    worst = 0.0
    for _ in range(cases):
        groups = int(rng.choice([1, 1, 2]))
        cin = groups * int(rng.integers(1, 8 // groups + 1))
        cout = groups * int(rng.integers(1, 8 // groups + 1))
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 1, 2]))
        pad = int(rng.integers(0, k // 2 + 1))
        h, w = int(rng.integers(k, 10)), int(rng.integers(k, 10))
        x = rng.standard_normal((int(rng.integers(1, 3)), cin, h, w)).astype(dtype)
        wt = rng.standard_normal((cout, cin // groups, k, k)).astype(dtype)
        b = rng.standard_normal(cout).astype(dtype)
        with precision(dtype):
            got = ops.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, padding=pad, groups=groups).data
        ref = oracles.conv2d(x, wt, b, stride, pad, groups)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    tol = 1e-5 if dtype == np.float32 else 1e-10
    return OracleResult(f"conv2d ({np.dtype(dtype).name})", worst, tol, cases)


def matmul_cases(rng: np.random.Generator, cases: int = 10) -> OracleResult:
    worst = 0.0
    for _ in range(cases):
        bsz, m, k, n = (int(v) for v in rng.integers(1, 6, size=4))
        a, b = rng.standard_normal((bsz, m, k)), rng.standard_normal((bsz, k, n))
        with precision(np.float64):
            got = ops.matmul_batched(Tensor(a), Tensor(b)).data
        worst = max(worst, float(np.max(np.abs(got - oracles.matmul(a, b)))))
    return OracleResult("matmul_batched", worst, 1e-6, cases)


def attention_cases(rng: np.random.Generator, cases: int = 10) -> OracleResult:
    worst = 0.0
    for _ in range(cases):
        heads = int(rng.choice([1, 2]))
        c = heads * int(rng.integers(1, 4))
        n = int(rng.integers(1, 5))
        tokens = rng.standard_normal((int(rng.integers(1, 3)), n, c))
        qkv_w, qkv_b = rng.standard_normal((3 * c, c)), rng.standard_normal(3 * c)
        proj_w, proj_b = rng.standard_normal((c, c)), rng.standard_normal(c)
        bias = rng.standard_normal((heads, n, n))
        with precision(np.float64):
            got = window_attention(Tensor(tokens), Tensor(qkv_w), Tensor(qkv_b), Tensor(proj_w), Tensor(proj_b),
                                   heads, Tensor(bias)).data
        ref = oracles.window_attention(tokens, qkv_w, qkv_b, proj_w, proj_b, heads, bias)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return OracleResult("window attention", worst, 1e-6, cases)


def scam_params(rng: np.random.Generator, c: int, tied: bool = False) -> dict[str, np.ndarray]:
    p = {}
    for side in (("l",) if tied else ("l", "r")):
        p[f"norm_{side}.weight"] = 1.0 + 0.1 * rng.standard_normal(c)
        p[f"norm_{side}.bias"] = 0.1 * rng.standard_normal(c)
        for proj in ("proj1", "proj2"):
            p[f"{side}_{proj}.weight"] = rng.standard_normal((c, c)) / np.sqrt(c)
            p[f"{side}_{proj}.bias"] = 0.1 * rng.standard_normal(c)
        p[f"scale_{side}"] = rng.standard_normal(c)
    return p


def scam_store(params: dict[str, np.ndarray], prefix: str = "scam") -> WeightStore:
    return WeightStore({f"{prefix}.{k}": Tensor(v) for k, v in params.items()})


def scam_cases(rng: np.random.Generator, cases: int = 6) -> OracleResult:
    worst = 0.0
    for i in range(cases):
        c = int(rng.integers(1, 5))
        w = 3 if i == 0 else int(rng.integers(1, 6))
        fl = rng.standard_normal((1, c, int(rng.integers(1, 4)), w))
        fr = rng.standard_normal(fl.shape)
        tied = bool(i % 2)
        p = scam_params(rng, c, tied)
        with precision(np.float64):
            gl, gr = scam_forward(Tensor(fl), Tensor(fr), scam_store(p), "scam", tied=tied)
        rl, rr = oracles.scam(fl, fr, p, tied)
        worst = max(worst, float(np.max(np.abs(gl.data - rl))), float(np.max(np.abs(gr.data - rr))))
    return OracleResult("scam", worst, 1e-6, cases)


def checkerboard(n: int = 16, cell: int = 2) -> np.ndarray:
    y, x = np.mgrid[0:n, 0:n]
    return (((y // cell) + (x // cell)) % 2).astype(np.float64)


def ssim_cases(rng: np.random.Generator) -> OracleResult:
    a = checkerboard()
    pairs = [(a, 0.9 * a), (rng.random((14, 17)), rng.random((14, 17)))]
    worst = max(abs(metrics.ssim(x, y) - oracles.ssim_gray(x, y)) for x, y in pairs)
    return OracleResult("ssim", worst, 1e-8, len(pairs))


def optimizer_cases(rng: np.random.Generator) -> OracleResult:
    worst = 0.0
    for kind, wd in (("adam", 0.0), ("adamw", 0.05)):
        cfg = OptimConfig(kind, 0.9, 0.99 if kind == "adam" else 0.9, wd, 1e-8)
        p0 = rng.standard_normal(5)
        grads = [rng.standard_normal(5) for _ in range(3)]
        store = WeightStore({"p": Tensor(p0.copy(), dtype=np.float64)})
        state = OptimState()
        for g in grads:
            optimizer_step(store, {"p": g}, state, cfg, 1e-3)
        ref = [oracles.adam_steps(float(p0[i]), [float(g[i]) for g in grads], 1e-3, cfg.beta1, cfg.beta2,
                                  cfg.eps, wd, kind == "adamw") for i in range(5)]
        worst = max(worst, float(np.max(np.abs(store["p"].data - np.array(ref)))))
    return OracleResult("adam/adamw 3 steps", worst, 1e-12, 2)


def reflect_cases(rng: np.random.Generator, cases: int = 20) -> OracleResult:
    worst = 0.0
    for _ in range(cases):
        h, w = (int(v) for v in rng.integers(2, 7, size=2))
        pads = (int(rng.integers(0, w)), int(rng.integers(0, w)), int(rng.integers(0, h)), int(rng.integers(0, h)))
        x = rng.standard_normal((1, 2, h, w))
        got = ops.reflect_pad2d(Tensor(x), pads).data
        worst = max(worst, float(np.max(np.abs(got - oracles.reflect_pad(x, *pads)))))
    return OracleResult("reflect_pad2d", worst, 0.0, cases)


def multipatch_cases(rng: np.random.Generator, cases: int = 10) -> OracleResult:
    worst = 0.0
    for _ in range(cases):
        p = int(rng.integers(1, 4))
        h, w = int(rng.integers(p, 3 * p + 3)), int(rng.integers(p, 3 * p + 3))
        img = rng.standard_normal((1, 2, h, w))
        y, x = int(rng.integers(0, h - p + 1)), int(rng.integers(0, w - p + 1))
        got = multi_patch_assemble(img, (y, x), p).data[0]
        padded = oracles.reflect_pad(img, p, p, p, p)[0]
        ref = oracles.block_unshuffle(padded[:, y:y + 3 * p, x:x + 3 * p], p)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return OracleResult("multi-patch assembly", worst, 0.0, cases)


def bicubic_cases(rng: np.random.Generator, cases: int = 6) -> OracleResult:
    worst = 0.0
    for _ in range(cases):
        f = int(rng.choice([2, 3, 4]))
        sig = rng.random(f * int(rng.integers(2, 8)))
        # identical rows, so the vertical pass is a partition of unity
        got = metrics.bicubic_downsample(np.tile(sig, (f, 1)), f)
        worst = max(worst, float(np.max(np.abs(got[0] - oracles.bicubic_downsample_1d(sig, f)))))
    return OracleResult("bicubic downsample", worst, 1e-12, cases)


def run_all(seed: int = 0) -> list[OracleResult]:
    rng = np.random.default_rng(seed)
    return [
        conv2d_cases(rng, 50, np.float32),
        conv2d_cases(rng, 10, np.float64),
        matmul_cases(rng),
        attention_cases(rng),
        scam_cases(rng),
        ssim_cases(rng),
        optimizer_cases(rng),
        reflect_cases(rng),
        multipatch_cases(rng),
        bicubic_cases(rng),
    ]


def format_table(results: list[OracleResult]) -> str:
    lines = [f"{'oracle':<24} {'cases':>5} {'max |diff|':>12} {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<24} {r.cases:>5} {r.max_abs_diff:>12.3e} {r.tol:>8.0e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
