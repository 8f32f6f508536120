import numpy as np
import pytest

from htcan.ensemble import (EnsembleSpec, dequantize, model_ensemble, parse_weight, quantize,
                            self_ensemble_mono, self_ensemble_stereo)
from htcan.errors import ContractError, UsageError
from htcan.pixel_ops import StereoPair
from htcan.tensor import Tensor


def nearest_up2(x):
    a = x.data if isinstance(x, Tensor) else x
    return Tensor(a.repeat(2, axis=-2).repeat(2, axis=-1))


def test_parse_weight():
    assert parse_weight("1/7") == 1 / 7
    assert parse_weight("0.25") == 0.25 and parse_weight(0.5) == 0.5
    with pytest.raises(UsageError):
        parse_weight("a/b")


def test_spec_validation():
    EnsembleSpec([("a", 0.5), ("b", 0.5)])
    with pytest.raises(UsageError):
        EnsembleSpec([("a", 0.5), ("b", 0.6)])
    with pytest.raises(UsageError):
        EnsembleSpec([("a", 1.5), ("b", -0.5)])


def test_mono_identity_and_equivariant(rng):
    x = rng.random((1, 3, 5, 5))
    assert np.array_equal(self_ensemble_mono(lambda t: t, x).data, x)
    y = rng.random((1, 3, 4, 6))
    assert np.max(np.abs(self_ensemble_mono(nearest_up2, y).data - nearest_up2(y).data)) < 1e-6
    const = np.full((1, 3, 4, 4), 0.3)
    out = self_ensemble_mono(lambda t: Tensor(np.asarray(getattr(t, "data", t)) * 2 + 0.1), const).data
    assert np.allclose(out, 0.7, atol=1e-12)


def test_mono_shape_contract(rng):
    # a map that crops columns is not shape-consistent under rotation
    with pytest.raises(ContractError):
        self_ensemble_mono(lambda t: Tensor(np.asarray(t.data)[..., :2]), rng.random((1, 1, 4, 4)))


def test_stereo_examples(rng):
    pair = StereoPair(rng.random((1, 3, 4, 6)), rng.random((1, 3, 4, 6)))
    out = self_ensemble_stereo(lambda p: p, pair)
    assert np.array_equal(out.left, pair.left) and np.array_equal(out.right, pair.right)
    w = rng.standard_normal((3, 3))

    def linear(p):
        return p.map(lambda v: np.einsum("oc,nchw->nohw", w, np.asarray(getattr(v, "data", v))) + 0.2)

    out = self_ensemble_stereo(linear, pair)
    ref = linear(pair)
    assert np.max(np.abs(out.left - ref.left)) < 1e-6 and np.max(np.abs(out.right - ref.right)) < 1e-6
    same = StereoPair(pair.left, pair.left.copy())
    out = self_ensemble_stereo(linear, same)
    assert np.max(np.abs(out.left - out.right)) < 1e-12


def test_model_ensemble_examples(rng):
    a, b = rng.random((1, 3, 2, 2)), rng.random((1, 3, 2, 2))
    assert np.allclose(model_ensemble([a, a, a], ["1/3", "1/3", "1/3"]), a, atol=1e-15)
    assert np.array_equal(model_ensemble([a, b], [0.5, 0.5]), (a + b) / 2)
    preds = [np.full((1, 1, 2, 2), v) for v in (7.0, 7.0, 7.0, 0.0)]
    assert np.all(model_ensemble(preds, ["1/7", "1/7", "1/7", "4/7"]) == 3.0)


def test_model_ensemble_permutation_invariant(rng):
    preds = [rng.random((1, 3, 3, 3)) for _ in range(4)]
    ws = [0.1, 0.2, 0.3, 0.4]
    order = [2, 0, 3, 1]
    a = model_ensemble(preds, ws)
    b = model_ensemble([preds[i] for i in order], [ws[i] for i in order])
    assert np.max(np.abs(a - b)) < 1e-15


def test_model_ensemble_errors(rng):
    with pytest.raises(UsageError):
        model_ensemble([np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3))], [0.5, 0.5])
    with pytest.raises(UsageError):
        model_ensemble([np.zeros((1, 1, 2, 2))], [0.5, 0.5])
    with pytest.raises(UsageError):
        model_ensemble([np.zeros(2), np.zeros(2)], [0.7, 0.7])


def test_quantize_rounding():
    assert quantize(np.array([0.5 / 255, 1.5 / 255, -1.0, 2.0, 254.5 / 255])).tolist() == [1, 2, 0, 255, 255]
    q = np.arange(256, dtype=np.uint8)
    assert np.array_equal(quantize(dequantize(q)), q)


def test_float_average_differs_from_quantized_average():
    a, b = np.array([0.6 / 255]), np.array([0.2 / 255])
    float_first = quantize(model_ensemble([a, b], [0.5, 0.5]))
    quant_first = quantize(model_ensemble([dequantize(quantize(a)), dequantize(quantize(b))], [0.5, 0.5]))
    # 0.4/255 rounds to 0, while the 8-bit inputs 1 and 0 average to a half that rounds up
    assert float_first.tolist() == [0] and quant_first.tolist() == [1]
