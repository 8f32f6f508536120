"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL verdict (printed in the terminal
summary, and to stdout when run with ``-s``) and then asserts it.
"""

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from htcan import gradcheck, metrics, ops, oracles, selftest, stage1, stage2
from htcan.config import PipelineConfig
from htcan.ensemble import dequantize, model_ensemble, quantize, self_ensemble_mono, self_ensemble_stereo
from htcan.imageio import write_png
from htcan.pipeline import perturb, run_pipeline_files
from htcan.pixel_ops import (StereoPair, apply_geom, mono_group, multi_patch_assemble, pixel_shuffle,
                             pixel_unshuffle, stereo_group, window_partition, window_reverse)
from htcan.stage1 import Stage1Config
from htcan.stage2 import Stage2Config
from htcan.tensor import Tensor, precision
from htcan.training import LrSchedule, ToyTrainConfig, charbonnier_loss, lr_at, train_toy
from htcan.training.loop import smooth

ROOT = Path(__file__).resolve().parents[1]
RESULTS: dict[str, tuple[bool, str]] = {}


def verdict(key: str, ok: bool, detail: str) -> None:
    RESULTS[key] = (bool(ok), detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_1_reference_numbers_documented():
    readme = (ROOT / "README.md").read_text(encoding="utf-8")
    needed = ["24.44", "23.8961", "23.83", "24.34"]
    missing = [n for n in needed if n not in readme]
    flagged = "not reproduced" in readme.lower()
    verdict("1", not missing and flagged,
            f"reference numbers in README: missing={missing}, marked as not reproduced={flagged}")


def test_criterion_2_exactness_suite():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    failures = []
    for i in range(100):
        r = int(rng.integers(1, 4))
        ws = int(rng.integers(1, 4))
        n, c = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        h, w = r * ws * int(rng.integers(1, 4)), r * ws * int(rng.integers(1, 4))
        x = rng.standard_normal((n, c, h, w))
        if not np.array_equal(pixel_shuffle(pixel_unshuffle(x, r), r).data, x):
            failures.append(("unshuffle", x.shape, r))
        y = rng.standard_normal((n, c * r * r, h, w))
        if not np.array_equal(pixel_unshuffle(pixel_shuffle(y, r), r).data, y):
            failures.append(("shuffle", y.shape, r))
        win, grid = window_partition(x, ws)
        if not np.array_equal(window_reverse(win, grid, ws, x.shape).data, x):
            failures.append(("window", x.shape, ws))
        ph, pw = min(h - 1, int(rng.integers(0, 4))), min(w - 1, int(rng.integers(0, 4)))
        pads = (pw, int(rng.integers(0, w)), ph, int(rng.integers(0, h)))
        if not np.array_equal(ops.reflect_pad2d(Tensor(x), pads).data, oracles.reflect_pad(x, *pads)):
            failures.append(("reflect", x.shape, pads))
        p = int(rng.integers(1, 4))
        img = rng.standard_normal((1, c, int(rng.integers(p, 12)), int(rng.integers(p, 12))))
        cy, cx = int(rng.integers(0, img.shape[2] - p + 1)), int(rng.integers(0, img.shape[3] - p + 1))
        mp = multi_patch_assemble(img, (cy, cx), p).data
        if not np.array_equal(mp[0, 4 * c:5 * c], img[0, :, cy:cy + p, cx:cx + p]):
            failures.append(("multipatch", img.shape, (cy, cx, p)))
        sq = rng.standard_normal((1, c, h, h))
        for t in mono_group():
            if not np.array_equal(apply_geom(apply_geom(sq, t), t.inverse()), sq):
                failures.append(("mono", t))
        pair = StereoPair(x, rng.standard_normal(x.shape))
        for t in stereo_group():
            back = apply_geom(apply_geom(pair, t), t.inverse())
            if not (np.array_equal(back.left, pair.left) and np.array_equal(back.right, pair.right)):
                failures.append(("stereo", t))
    dt = time.perf_counter() - t0
    verdict("2", not failures and dt < 1.0,
            f"100 random shapes, {len(failures)} mismatches, {dt:.2f}s (limit 1s)")


def test_criterion_3_oracle_suite():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    results = [selftest.conv2d_cases(rng, 50, np.float32), selftest.attention_cases(rng),
               selftest.scam_cases(rng), selftest.ssim_cases(rng), selftest.optimizer_cases(rng)]
    dt = time.perf_counter() - t0
    limits = {"conv2d (float32)": 1e-5, "window attention": 1e-6, "scam": 1e-6, "ssim": 1e-8,
              "adam/adamw 3 steps": 1e-12}
    ok = all(r.max_abs_diff < limits[r.name] for r in results) and dt < 30
    detail = ", ".join(f"{r.name} {r.max_abs_diff:.1e}<{limits[r.name]:.0e}" for r in results)
    verdict("3", ok, f"{detail}; {dt:.1f}s (limit 30s)")


def test_criterion_4_gradient_suite():
    t0 = time.perf_counter()
    results = gradcheck.run_all(7)
    dt = time.perf_counter() - t0
    cfg1, cfg2 = Stage1Config.tiny(), Stage2Config.tiny()
    shapes_ok = ((cfg1.channels, cfg1.groups, cfg1.blocks_per_group, cfg1.window) == (8, 1, 1, 4)
                 and (cfg2.channels, cfg2.blocks, cfg2.unshuffle) == (8, 4, 2))
    names1 = set(stage1.param_layout(cfg1))
    names2 = set(stage2.param_layout(cfg2))
    checked = {r.name for r in results}
    covered = names1 <= checked and names2 <= checked
    worst = {g: max(r.rel_error for r in results if r.group == g) for g in ("op", "stage1", "stage2")}
    ok = worst["op"] < 1e-5 and max(worst["stage1"], worst["stage2"]) < 1e-4 and covered and shapes_ok and dt < 120
    verdict("4", ok, f"max rel err ops {worst['op']:.1e}, stage1 {worst['stage1']:.1e} ({len(names1)} tensors), "
                     f"stage2 {worst['stage2']:.1e} ({len(names2)} tensors), all params covered={covered}, "
                     f"{dt:.1f}s (limit 120s)")


def test_criterion_5_structural_invariants():
    rng = np.random.default_rng(5)
    cfg1 = Stage1Config.tiny(groups=2)
    f0 = Tensor(rng.standard_normal((2, 8, 8, 8)).astype(np.float32))
    trunk_dev = float(np.max(np.abs(stage1.trunk_forward(f0, stage1.init_weights(cfg1, 1), cfg1).data - f0.data)))
    cfg2 = Stage2Config.tiny()
    pair = StereoPair(rng.random((1, 3, 8, 12)).astype(np.float32), rng.random((1, 3, 8, 12)).astype(np.float32))
    out = stage2.stage2_forward(pair, stage2.init_weights(cfg2, 2), cfg2)
    s2_dev = float(max(np.max(np.abs(out.left.data - pair.left)), np.max(np.abs(out.right.data - pair.right))))

    c = 4
    fl, fr = rng.standard_normal((1, c, 5, 7)), rng.standard_normal((1, c, 5, 7))
    W = selftest.scam_store(selftest.scam_params(rng, c))
    with precision(np.float64):
        bl, br = stage2.scam_forward(Tensor(fl), Tensor(fr), W, "scam")
        fr2 = fr.copy()
        fr2[:, :, 3] += 1.0
        nl, nr = stage2.scam_forward(Tensor(fl), Tensor(fr2), W, "scam")
    rows = [0, 1, 2, 4]
    local = np.array_equal(nl.data[:, :, rows], bl.data[:, :, rows]) and np.array_equal(nr.data[:, :, rows], br.data[:, :, rows])

    tied = Stage2Config.tiny(tied_views=True)
    Wt = perturb(stage2.init_weights(tied, 3, dtype=np.float64), rng, 0.2)
    p64 = StereoPair(rng.random((1, 3, 8, 12)), rng.random((1, 3, 8, 12)))
    with precision(np.float64):
        a = stage2.stage2_forward(p64, Wt, tied)
        b = stage2.stage2_forward(p64.swap(), Wt, tied)
    swap_err = float(max(np.max(np.abs(b.left.data - a.right.data)), np.max(np.abs(b.right.data - a.left.data))))
    ok = trunk_dev == 0.0 and s2_dev == 0.0 and local and swap_err < 1e-6
    verdict("5", ok, f"stage1 trunk dev {trunk_dev}, stage2 dev {s2_dev}, scanline locality {local}, "
                     f"tied swap err {swap_err:.1e} (<1e-6)")


def test_criterion_6_ensemble_invariants():
    rng = np.random.default_rng(6)
    x = rng.random((1, 3, 5, 7))

    def up2(t):
        a = t.data if isinstance(t, Tensor) else t
        return Tensor(a.repeat(2, -2).repeat(2, -1))

    mono_err = float(np.max(np.abs(self_ensemble_mono(up2, x).data - up2(x).data)))
    w = rng.standard_normal((3, 3))

    def g(p):
        return p.map(lambda v: np.einsum("oc,nchw->nohw", w, np.asarray(getattr(v, "data", v))))

    pair = StereoPair(x, rng.random(x.shape))
    se = self_ensemble_stereo(g, pair)
    stereo_err = float(max(np.max(np.abs(se.left - g(pair).left)), np.max(np.abs(se.right - g(pair).right))))
    preds = [np.full((1, 3, 2, 2), v) for v in (7.0, 7.0, 7.0, 0.0)]
    me = model_ensemble(preds, ["1/7", "1/7", "1/7", "4/7"])
    exact = bool(np.all(me == 3.0))
    a, b = np.array([0.6 / 255]), np.array([0.2 / 255])
    float_first = int(quantize(model_ensemble([a, b], [0.5, 0.5]))[0])
    quant_first = int(quantize(model_ensemble([dequantize(quantize(a)), dequantize(quantize(b))], [0.5, 0.5]))[0])
    ok = mono_err < 1e-6 and stereo_err < 1e-6 and exact and float_first != quant_first
    verdict("6", ok, f"mono err {mono_err:.1e}, stereo err {stereo_err:.1e}, (1/7,1/7,1/7,4/7) on (7,7,7,0) "
                     f"-> {float(me.flat[0])}, quantize-after {float_first} vs before {quant_first}")


def test_criterion_7_schedule_and_loss():
    ms = LrSchedule("multistep_half", 2e-4, (300_000, 500_000, 650_000, 700_000, 750_000))
    cos = LrSchedule("cosine", 5e-4, total_iters=300_000, min_lr=1e-7)
    checks = {
        "400K=1e-4": lr_at(400_000, ms) == 1e-4,
        "760K=6.25e-6": lr_at(760_000, ms) == 6.25e-6,
        "cos0=5e-4": lr_at(0, cos) == 5e-4,
        "cosT=1e-7": lr_at(300_000, cos) == 1e-7,
    }
    z = Tensor(np.zeros((2, 2), dtype=np.float64))
    checks["charb(eq)=1e-3"] = abs(charbonnier_loss(z, z, 1e-3).item() - 1e-3) < 1e-9
    checks["charb(3e-3)"] = abs(charbonnier_loss(Tensor(np.full((2, 2), 3e-3)), z, 1e-3).item() - math.sqrt(1e-5)) < 1e-9
    ones = np.ones((3, 4, 4))
    checks["psnr(0.1)=20"] = abs(metrics.psnr(0.5 * ones, 0.6 * ones) - 20.0) < 1e-9
    checks["psnr(0,1)=0"] = abs(metrics.psnr(0 * ones, ones)) < 1e-9
    bad = [k for k, v in checks.items() if not v]
    verdict("7", not bad, f"{len(checks) - len(bad)}/{len(checks)} closed-form checks exact" + (f"; failed {bad}" if bad else ""))


@pytest.fixture(scope="module")
def toy_runs():
    t0 = time.perf_counter()
    s1a = train_toy(1, seed=0)
    s1b = train_toy(1, seed=0)
    s2a = train_toy(2, seed=0, upstream={1: s1a.weights})
    s2b = train_toy(2, seed=0, upstream={1: s1b.weights})
    return s1a, s1b, s2a, s2b, time.perf_counter() - t0


def _descent(res, window):
    ratio = res.descent_ratio(window)
    kinds = [r.loss_kind for r in res.trace]
    switched = "charbonnier" in kinds and "mse" in kinds and kinds.index("mse") > kinds.index("charbonnier")
    crossing = smooth(res.losses(), window)
    return ratio, switched, float(crossing[-1] / crossing[window - 1])


def test_criterion_8a_toy_stage1_descent(toy_runs):
    s1a, s1b, _, _, dt = toy_runs
    ratio, switched, crossing = _descent(s1a, 20)
    same = [r.loss for r in s1a.trace] == [r.loss for r in s1b.trace]
    ok = ratio <= 0.5 and switched and same and dt < 300
    verdict("8.1", ok, f"stage1 Charbonnier smoothed loss ratio {ratio:.3f} (need <=0.5), phase switch {switched}, "
                       f"repeat-run traces identical {same}, {len(s1a.trace)} iters on {ToyTrainConfig().data.pairs} synthetic pairs")


def test_criterion_8b_toy_stage2_descent(toy_runs):
    _, _, s2a, s2b, dt = toy_runs
    ratio, switched, crossing = _descent(s2a, 20)
    same = [r.loss for r in s2a.trace] == [r.loss for r in s2b.trace]
    ok = ratio <= 0.5 and switched and same and dt < 300
    verdict("8.2", ok, f"stage2 Charbonnier smoothed loss ratio {ratio:.3f} (need <=0.5), phase switch {switched}, "
                       f"repeat-run traces identical {same}, both stages x2 in {dt:.0f}s (limit 300s); "
                       f"ratio across the loss switch would be {crossing:.3f} but mixes loss units")


def _sr(config, lr_dir, out_dir, env_threads, workers):
    env = dict(os.environ, OPENBLAS_NUM_THREADS=str(env_threads), OMP_NUM_THREADS=str(env_threads),
               MKL_NUM_THREADS=str(env_threads))
    cmd = [sys.executable, "-m", "htcan", "sr", "--left", str(lr_dir / "a_L.png"), "--right", str(lr_dir / "a_R.png"),
           "--out-left", str(out_dir / "a_L.png"), "--out-right", str(out_dir / "a_R.png"),
           "--config", str(config), "--workers", str(workers)]
    subprocess.run(cmd, check=True, env=env, capture_output=True)
    return (out_dir / "a_L.png").read_bytes() + (out_dir / "a_R.png").read_bytes()


def test_criterion_9_end_to_end_determinism(toy_config, tmp_path):
    t0 = time.perf_counter()
    cfg = PipelineConfig.load(toy_config)
    assert len(cfg.members) == 2 and cfg.stage3 is not None
    assert cfg.stage1_self_ensemble and cfg.stage2.self_ensemble
    rng = np.random.default_rng(9)
    lr = tmp_path / "lr"
    lr.mkdir()
    write_png(lr / "a_L.png", rng.random((1, 3, 32, 96)))
    write_png(lr / "a_R.png", rng.random((1, 3, 32, 96)))
    first = tmp_path / "run1"
    run_pipeline_files(lr / "a_L.png", lr / "a_R.png", first / "a_L.png", first / "a_R.png", cfg)
    again = tmp_path / "run2"
    run_pipeline_files(lr / "a_L.png", lr / "a_R.png", again / "a_L.png", again / "a_R.png", cfg)
    b1 = (first / "a_L.png").read_bytes() + (first / "a_R.png").read_bytes()
    b2 = (again / "a_L.png").read_bytes() + (again / "a_R.png").read_bytes()
    single = _sr(toy_config, lr, tmp_path / "t1", 1, 1)
    multi = _sr(toy_config, lr, tmp_path / "tn", 4, 4)
    runs_same, threads_same = b1 == b2, b1 == single == multi

    sr = _read(first)
    row = metrics.evaluate_protocol({"a": sr}, {"a": _read(again)}).rows[0]
    ssim_one = row.left_ssim == 1.0 and row.pair_ssim == 1.0
    corrupt = sr.left.copy()
    corrupt[..., :64] = 1.0 - corrupt[..., :64]
    noisy = StereoPair(*(np.clip(v + 0.02 * rng.standard_normal(v.shape), 0, 1) for v in (sr.left, sr.right)))
    bad = metrics.evaluate_pair("a", StereoPair(np.concatenate([corrupt[..., :64], noisy.left[..., 64:]], -1),
                                                noisy.right), sr)
    base = metrics.evaluate_pair("a", noisy, sr)
    witness = bad.left_psnr == base.left_psnr and bad.pair_psnr < base.pair_psnr
    dt = time.perf_counter() - t0
    ok = runs_same and threads_same and ssim_one and witness and dt < 60
    verdict("9", ok, f"byte-identical across runs {runs_same}, 1 vs 4 threads {threads_same}, "
                     f"SR=GT SSIM {row.left_ssim}/{row.pair_ssim}, left-margin witness {witness}, {dt:.1f}s (limit 60s)")


def _read(d):
    from htcan.imageio import read_pair

    return read_pair(d / "a_L.png", d / "a_R.png", np.float64)
