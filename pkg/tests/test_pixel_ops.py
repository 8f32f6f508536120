import numpy as np
import pytest

from htcan import oracles
from htcan.errors import ShapeError, UsageError
from htcan.pixel_ops import (GeomTransform, StereoPair, apply_geom, mono_group, multi_patch_assemble,
                             pixel_shuffle, pixel_unshuffle, stereo_group, window_partition, window_reverse)


def test_shuffle_index_formula():
    x = np.arange(1, 5, dtype=np.float64).reshape(1, 4, 1, 1)
    assert pixel_shuffle(x, 2).data.tolist() == [[[[1, 2], [3, 4]]]]
    y = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert pixel_unshuffle(y, 2).data.ravel().tolist() == [1, 2, 3, 4]


def test_shuffle_general_formula(rng):
    r = 3
    x = rng.standard_normal((2, 2 * r * r, 3, 4))
    out = pixel_shuffle(x, r).data
    for c in range(2):
        for i in range(r):
            for j in range(r):
                assert np.array_equal(out[:, c, i::r, j::r], x[:, c * r * r + i * r + j])


def test_shuffle_identity_and_roundtrip(rng):
    x = rng.standard_normal((1, 3, 4, 6))
    assert np.array_equal(pixel_shuffle(x, 1).data, x)
    assert np.array_equal(pixel_unshuffle(x, 1).data, x)
    assert np.array_equal(pixel_unshuffle(pixel_shuffle(pixel_unshuffle(x, 2), 2), 2).data, pixel_unshuffle(x, 2).data)


def test_shuffle_errors():
    with pytest.raises(ShapeError):
        pixel_shuffle(np.zeros((1, 3, 2, 2)), 2)
    with pytest.raises(ShapeError, match="2"):
        pixel_unshuffle(np.zeros((1, 1, 3, 4)), 2)


def test_window_partition_examples():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    win, grid = window_partition(x, 4)
    assert grid == (1, 1) and win.data.ravel().tolist() == list(range(16))
    win, grid = window_partition(x, 2)
    assert win.shape == (4, 4, 1) and grid == (2, 2)
    assert win.data[0, :, 0].tolist() == [0, 1, 4, 5]
    assert np.array_equal(window_reverse(win, grid, 2, x.shape).data, x)
    with pytest.raises(ShapeError):
        window_partition(np.zeros((1, 1, 5, 4)), 2)
    with pytest.raises(ShapeError):
        window_reverse(win, (3, 3), 2, x.shape)


def test_geom_examples(rng):
    row = np.array([[[[1.0, 2.0, 3.0]]]])
    assert np.array_equal(apply_geom(row, GeomTransform()), row)
    assert apply_geom(row, GeomTransform(hflip=True)).ravel().tolist() == [3, 2, 1]
    left, right = rng.random((1, 3, 2, 2)), rng.random((1, 3, 2, 2))
    swapped = apply_geom(StereoPair(left, right), GeomTransform(swap_views=True))
    assert swapped.left is right and swapped.right is left


def test_group_roundtrips_bit_exact(rng):
    x = rng.standard_normal((1, 3, 5, 5))
    mono = mono_group()
    assert len(mono) == 8 and len(set(mono)) == 8
    for t in mono:
        assert np.array_equal(apply_geom(apply_geom(x, t), t.inverse()), x)
    pair = StereoPair(rng.standard_normal((1, 3, 4, 6)), rng.standard_normal((1, 3, 4, 6)))
    stereo = stereo_group()
    assert len(stereo) == 8 and all(t.rot90 == 0 for t in stereo)
    for t in stereo:
        back = apply_geom(apply_geom(pair, t), t.inverse())
        assert np.array_equal(back.left, pair.left) and np.array_equal(back.right, pair.right)
    assert len(stereo_group(include_swap=False)) == 4


def test_multi_patch_constant_and_center(rng):
    img = np.full((1, 2, 10, 10), 0.25)
    out = multi_patch_assemble(img, (4, 4), 2).data
    assert out.shape == (1, 18, 2, 2) and np.all(out == 0.25)
    img = rng.standard_normal((1, 3, 9, 11))
    for center in [(0, 0), (3, 4), (6, 8)]:
        out = multi_patch_assemble(img, center, 3).data
        y, x = center
        assert np.array_equal(out[0, 12:15], img[0, :, y:y + 3, x:x + 3])


def test_multi_patch_interior_matches_crop_oracle(rng):
    img = rng.standard_normal((1, 2, 12, 12))
    out = multi_patch_assemble(img, (4, 5), 2).data[0]
    ref = oracles.block_unshuffle(img[0, :, 2:8, 3:9], 2)
    assert np.array_equal(out, ref)


def test_multi_patch_corner_uses_reflection(rng):
    img = rng.standard_normal((1, 2, 6, 6))
    out = multi_patch_assemble(img, (0, 0), 2).data[0]
    padded = oracles.reflect_pad(img, 2, 2, 2, 2)[0]
    assert np.array_equal(out, oracles.block_unshuffle(padded[:, 0:6, 0:6], 2))


def test_multi_patch_outside_image():
    with pytest.raises(UsageError):
        multi_patch_assemble(np.zeros((1, 1, 4, 4)), (3, 0), 2)
