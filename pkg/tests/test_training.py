import dataclasses
import math

import numpy as np
import pytest

from htcan import oracles
from htcan.errors import ConfigError, ShapeError, UsageError
from htcan.metrics import bicubic_downsample
from htcan.pixel_ops import GeomTransform, StereoPair
from htcan.tensor import Tensor
from htcan.training import (AugmentConfig, LrSchedule, OptimConfig, OptimState, StageTrainConfig, SyntheticSpec,
                            ToyTrainConfig, TrainSample, augment, charbonnier_loss, lr_at, mixup, mse_loss,
                            optimizer_step, smooth, synthetic_dataset, train_toy)
from htcan.training.augment import AugmentDraw, apply_draw, draw
from htcan.weights import WeightStore

FULL_MILESTONES = (300_000, 500_000, 650_000, 700_000, 750_000)


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def test_charbonnier_examples():
    a = np.zeros((2, 3))
    assert abs(charbonnier_loss(T(a), T(a), 1e-3).item() - 1e-3) < 1e-15
    assert abs(charbonnier_loss(T(a + 3e-3), T(a), 1e-3).item() - math.sqrt(1e-5)) < 1e-9
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    assert charbonnier_loss(T(x), T(y)).item() >= 1e-3
    big = np.full((3,), 2.0)
    assert abs(charbonnier_loss(T(big), T(0 * big)).item() - 2.0) < 1e-3
    with pytest.raises(UsageError):
        charbonnier_loss(T(a), T(a), 0.0)
    with pytest.raises(ShapeError):
        charbonnier_loss(T(a), T(a[:1]))


def test_mse_examples():
    a = np.random.default_rng(1).random((3, 3))
    assert mse_loss(T(a), T(a)).item() == 0.0
    assert abs(mse_loss(T(a + 0.1), T(a)).item() - 0.01) < 1e-12
    b = a[::-1].copy()
    assert mse_loss(T(a), T(b)).item() == mse_loss(T(b), T(a)).item()


def test_adam_first_step_closed_form():
    g = np.array([0.5, -2.0, 1e-3])
    W = WeightStore({"p": Tensor(np.zeros(3, dtype=np.float64))})
    cfg = OptimConfig("adam", 0.9, 0.99, eps=1e-8)
    optimizer_step(W, {"p": g}, OptimState(), cfg, 1e-2)
    assert np.allclose(W["p"].data, -1e-2 * g / (np.abs(g) + 1e-8), atol=1e-15, rtol=0)


def test_zero_grad_behaviour():
    p0 = np.array([1.0, -2.0])
    for kind, expect in (("adam", p0), ("adamw", p0 * (1 - 0.1 * 0.5))):
        W = WeightStore({"p": Tensor(p0.copy())})
        optimizer_step(W, {"p": np.zeros(2)}, OptimState(), OptimConfig(kind, weight_decay=0.5), 0.1)
        assert np.allclose(W["p"].data, expect, atol=1e-15, rtol=0)


@pytest.mark.parametrize("kind,wd", [("adam", 0.0), ("adamw", 0.01)])
def test_two_steps_match_oracle(kind, wd):
    g = np.array([0.3, -0.7])
    W = WeightStore({"p": Tensor(np.array([0.2, 0.4]))})
    cfg = OptimConfig(kind, 0.9, 0.9, weight_decay=wd)
    st = OptimState()
    for _ in range(2):
        optimizer_step(W, {"p": g}, st, cfg, 1e-3)
    ref = [oracles.adam_steps(p, [gi, gi], 1e-3, 0.9, 0.9, 1e-8, wd, kind == "adamw") for p, gi in zip((0.2, 0.4), g)]
    assert np.max(np.abs(W["p"].data - ref)) < 1e-12


def test_optim_config_validation():
    with pytest.raises(ConfigError):
        OptimConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        OptimConfig(kind="sgd")


def test_lr_schedule_values():
    ms = LrSchedule("multistep_half", 2e-4, FULL_MILESTONES)
    assert lr_at(0, ms) == 2e-4
    assert lr_at(400_000, ms) == 1e-4
    assert lr_at(760_000, ms) == 6.25e-6
    cos = LrSchedule("cosine", 5e-4, total_iters=300_000, min_lr=1e-7)
    assert lr_at(0, cos) == 5e-4
    assert lr_at(300_000, cos) == 1e-7 and lr_at(400_000, cos) == 1e-7
    # midpoint is the mean of the endpoints, (5e-4 + 1e-7) / 2
    assert abs(lr_at(150_000, cos) - 2.5005e-4) < 1e-12
    for s, n in ((ms, 800_000), (cos, 300_000)):
        vals = [lr_at(i, s) for i in range(0, n + 1, 997)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_lr_schedule_validation():
    with pytest.raises(ConfigError):
        LrSchedule(milestones=(5, 5))
    with pytest.raises(ConfigError):
        LrSchedule("cosine", 1e-4, total_iters=10, min_lr=1e-3)
    with pytest.raises(UsageError):
        lr_at(-1, LrSchedule())


def _mono(rng):
    hr = rng.random((3, 16, 16))
    return TrainSample(bicubic_downsample(hr, 4), hr)


def test_augment_off_and_permutation(rng):
    s = _mono(rng)
    out = augment(s, AugmentConfig(), rng)
    assert np.array_equal(out.lr, s.lr) and np.array_equal(out.hr, s.hr)
    out = apply_draw(s, AugmentDraw((2, 1, 0), GeomTransform()))
    assert np.array_equal(out.lr[0], s.lr[2]) and np.array_equal(out.hr[2], s.hr[0])
    assert np.array_equal(out.hr[1], s.hr[1])


def test_mixup_degenerate(rng):
    a, b = _mono(rng), _mono(rng)
    assert mixup(a, b, 1.0) is a


def test_stereo_hflip_swaps_views(rng):
    cfg = AugmentConfig(hflip=True)
    for _ in range(10):
        d = draw(cfg, rng, stereo=True)
        assert d.transform.swap_views == d.transform.hflip
    with pytest.raises(ConfigError):
        draw(AugmentConfig(rotation=True), rng, stereo=True)


def test_augment_preserves_alignment(rng):
    hr = rng.random((3, 16, 16))
    for d in (AugmentDraw((1, 2, 0), GeomTransform(hflip=True)), AugmentDraw(None, GeomTransform(vflip=True)),
              AugmentDraw((2, 0, 1), GeomTransform(hflip=True, vflip=True))):
        out = apply_draw(TrainSample(bicubic_downsample(hr, 4), hr), d)
        assert np.array_equal(bicubic_downsample(out.hr, 4), out.lr)
    out = apply_draw(TrainSample(bicubic_downsample(hr, 4), hr), AugmentDraw(None, GeomTransform(rot90=1)))
    assert np.max(np.abs(bicubic_downsample(out.hr, 4) - out.lr)) < 1e-12
    a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    m = mixup(TrainSample(bicubic_downsample(a, 4), a), TrainSample(bicubic_downsample(b, 4), b), 0.3)
    assert np.max(np.abs(bicubic_downsample(m.hr, 4) - m.lr)) < 1e-6


def test_stereo_augment_consistent(rng):
    hr = StereoPair(rng.random((3, 8, 8)), rng.random((3, 8, 8)))
    lr = hr.map(lambda v: bicubic_downsample(v, 2))
    out = augment(TrainSample(lr, hr), AugmentConfig.stage2(), np.random.default_rng(4))
    assert np.array_equal(out.lr.left, bicubic_downsample(out.hr.left, 2))
    assert np.array_equal(out.lr.right, bicubic_downsample(out.hr.right, 2))


def test_synthetic_dataset():
    ds = synthetic_dataset(SyntheticSpec(pairs=3, hr_height=16, hr_width=32))
    assert len(ds) == 3 and ds.hr[0].left.shape == (3, 16, 32) and ds.lr[0].left.shape == (3, 4, 8)
    again = synthetic_dataset(SyntheticSpec(pairs=3, hr_height=16, hr_width=32))
    assert all(np.array_equal(a.left, b.left) for a, b in zip(ds.hr, again.hr))


def test_smooth():
    assert smooth([1, 2, 3, 4], 2).tolist() == [1.0, 1.5, 2.5, 3.5]


SMALL = ToyTrainConfig(data=SyntheticSpec(pairs=4, hr_height=32, hr_width=64))


def test_train_toy_deterministic_and_switch():
    a = train_toy(1, SMALL, iters=20, seed=3)
    b = train_toy(1, SMALL, iters=20, seed=3)
    assert [r.loss for r in a.trace] == [r.loss for r in b.trace]
    assert a.weights.to_bytes() == b.weights.to_bytes()
    kinds = [r.loss_kind for r in a.trace]
    assert kinds[0] == "charbonnier" and kinds[-1] == "mse"
    c = train_toy(1, SMALL, iters=20, seed=4)
    assert [r.loss for r in c.trace] != [r.loss for r in a.trace]


def test_zero_learning_rate_constant_trace():
    st = dataclasses.replace(SMALL.stage1, schedule=LrSchedule("multistep_half", 0.0), fixed_batch=True,
                             switch_iter=None)
    res = train_toy(1, dataclasses.replace(SMALL, stage1=st), iters=5, seed=0)
    losses = [r.loss for r in res.trace]
    assert len(set(losses)) == 1


def test_stage_chain_and_csv(tmp_path):
    res = train_toy(3, SMALL, iters=4, seed=1,
                    upstream={1: train_toy(1, SMALL, iters=4, seed=1).weights})
    assert set(res.upstream) == {1, 2}
    assert all(n.startswith("stage3.") for n in res.weights.names())
    path = tmp_path / "trace.csv"
    res.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,lr,loss" and len(lines) == 5


def test_train_config_from_dict():
    cfg = StageTrainConfig.from_dict({"iters": 5, "optim": {"kind": "adamw"}, "schedule": {"kind": "cosine",
                                      "init_lr": 1e-3, "total_iters": 5}})
    assert cfg.optim.kind == "adamw" and cfg.schedule.total_iters == 5
    with pytest.raises(ConfigError):
        StageTrainConfig.from_dict({"iterations": 5})
    with pytest.raises(UsageError):
        train_toy(4, SMALL)
