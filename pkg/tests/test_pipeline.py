import numpy as np
import pytest

from htcan.config import PipelineConfig
from htcan.errors import LoadError
from htcan.imageio import read_png, write_png
from htcan.pipeline import init_pipeline_weights, load_weights, run_pipeline, run_pipeline_files
from htcan.pixel_ops import StereoPair


def _lr_pair(rng, h=12, w=20):
    return StereoPair(rng.random((1, 3, h, w)).astype(np.float32), rng.random((1, 3, h, w)).astype(np.float32))


def test_dataflow_trace(toy_config, rng):
    cfg = PipelineConfig.load(toy_config)
    res = run_pipeline(_lr_pair(rng, 32, 96), cfg)
    t = dict(res.trace)
    assert t["input"] == (1, 3, 32, 96)
    assert t["stage1.patch_batch"] == (48, 27, 8, 8)
    assert t["stage1.patch_out"] == (48, 3, 32, 32)
    assert t["stage1.output"] == t["stage1.ensembled"] == (1, 3, 128, 384)
    assert t["stage2.unshuffle"] == t["stage3.unshuffle"] == (2, 12, 64, 192)
    assert t["stage2.features"] == (2, 8, 64, 192)
    assert t["stage2.output"] == (2, 3, 128, 384)
    assert t["final"] == (1, 3, 128, 384)
    assert [label for label, _ in res.trace][-1] == "final"


def test_identity_weights_shape_contract(tmp_path, rng):
    from conftest import toy_pipeline_dir

    cfg = PipelineConfig.load(toy_pipeline_dir(tmp_path, noise=0.0))
    res = run_pipeline(_lr_pair(rng), cfg)
    assert res.output.left.shape == (1, 3, 48, 80)
    # zero-initialised stage 2/3 leave the stage-1 result untouched
    assert np.max(np.abs(res.output.left - res.stage1.left)) < 1e-6


def test_disabling_later_stages_equals_stage1(toy_config, rng):
    cfg = PipelineConfig.load(toy_config)
    pair = _lr_pair(rng)
    full = run_pipeline(pair, cfg)
    only = run_pipeline(pair, cfg.with_stages("1"))
    assert only.output.left.tobytes() == full.stage1.left.tobytes()
    assert only.stage2 is None


def test_stage2_participates(toy_config, rng):
    cfg = PipelineConfig.load(toy_config)
    pair = _lr_pair(rng)
    a = run_pipeline(pair, cfg.with_stages("1")).output
    b = run_pipeline(pair, cfg.with_stages("12")).output
    assert np.max(np.abs(a.left - b.left)) > 1e-3


def test_final_blend_is_half_half(toy_config, rng):
    res = run_pipeline(_lr_pair(rng), PipelineConfig.load(toy_config))
    assert np.max(np.abs(res.output.left - 0.5 * (res.stage2.left + res.stage3.left))) < 1e-12


def test_odd_sizes_padded_for_stage2(toy_config, rng):
    cfg = PipelineConfig.load(toy_config).without_self_ensemble()
    res = run_pipeline(_lr_pair(rng, 9, 13), cfg)
    assert res.output.left.shape == (1, 3, 36, 52)


def test_files_roundtrip_and_single_quantization(toy_config, tmp_path, rng):
    cfg = PipelineConfig.load(toy_config).without_self_ensemble()
    pair = _lr_pair(rng)
    write_png(tmp_path / "l.png", pair.left)
    write_png(tmp_path / "r.png", pair.right)
    res = run_pipeline_files(tmp_path / "l.png", tmp_path / "r.png", tmp_path / "ol.png", tmp_path / "or.png", cfg)
    out = read_png(tmp_path / "ol.png", np.float64)
    assert out.shape == (1, 3, 48, 80)
    expect = np.floor(np.clip(res.output.left, 0, 1) * 255 + 0.5) / 255
    assert np.array_equal(out, expect)


def test_missing_and_corrupt_weights(toy_config):
    cfg = PipelineConfig.load(toy_config)
    path = cfg.stage2.weights
    blob = bytearray(path.read_bytes())
    blob[40] ^= 1
    path.write_bytes(bytes(blob))
    with pytest.raises(LoadError, match="CRC"):
        load_weights(cfg)
    path.unlink()
    with pytest.raises(LoadError, match="missing"):
        load_weights(cfg)


def test_init_weights_deterministic(toy_config):
    cfg = PipelineConfig.load(toy_config)
    a, b = init_pipeline_weights(cfg, 9, 0.1), init_pipeline_weights(cfg, 9, 0.1)
    assert a.stage2.to_bytes() == b.stage2.to_bytes()
    assert a.stage1[0].to_bytes() != a.stage1[1].to_bytes()
