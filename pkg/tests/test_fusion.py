"""Gate blending tests: convexity envelope, the sigmoid coefficient,
elementwise mode, and gradient flow through the fused sequence."""

import numpy as np
import numpy.testing as npt
import pytest

from avrn import autodiff as ad
from avrn import fusion, lstm
from avrn.errors import ShapeError


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@pytest.mark.parametrize("seed", range(6))
def test_gate_matches_reference(seed):
    rng = np.random.default_rng(seed)
    params = fusion.FusionGateParams.init(4, rng)
    a = rng.normal(size=(4, 1))
    v = rng.normal(size=(4, 1))
    c, fused = fusion.gate(params, ad.constant(a), ad.constant(v))

    drive = params.w_audio.value @ a + params.w_visual.value @ v + params.bias.value
    c_ref = _sigmoid(drive)
    npt.assert_allclose(c.value, c_ref, rtol=1e-12)
    npt.assert_allclose(fused.value, c_ref * a + (1 - c_ref) * v, rtol=1e-12)


def test_gate_is_scalar_by_default():
    params = fusion.FusionGateParams.init(5, np.random.default_rng(0))
    c, _ = fusion.gate(params, ad.constant(np.ones((5, 1))), ad.constant(np.zeros((5, 1))))
    assert c.value.shape == (1, 1)


def test_blend_stays_inside_envelope():
    # convexity: every fused coordinate between the two inputs
    rng = np.random.default_rng(42)
    params = fusion.FusionGateParams.init(6, rng)
    for _ in range(300):
        a = rng.normal(size=(6, 1)) * rng.uniform(0.1, 10)
        v = rng.normal(size=(6, 1)) * rng.uniform(0.1, 10)
        c, fused = fusion.gate(params, ad.constant(a), ad.constant(v))
        lo = np.minimum(a, v)
        hi = np.maximum(a, v)
        assert np.all(fused.value >= lo - 1e-12)
        assert np.all(fused.value <= hi + 1e-12)
        assert 0.0 < c.value.item() < 1.0


def test_elementwise_gate_per_coordinate():
    rng = np.random.default_rng(3)
    params = fusion.FusionGateParams.init(3, rng, elementwise=True)
    a = rng.normal(size=(3, 1))
    v = rng.normal(size=(3, 1))
    c, fused = fusion.gate(params, ad.constant(a), ad.constant(v))
    assert c.value.shape == (3, 1)
    npt.assert_allclose(fused.value, c.value * a + (1 - c.value) * v, rtol=1e-12)


def test_gate_shape_mismatch_rejected():
    params = fusion.FusionGateParams.init(4, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        fusion.gate(params, ad.constant(np.zeros((4, 1))), ad.constant(np.zeros((3, 1))))
    with pytest.raises(ShapeError):
        fusion.gate(params, ad.constant(np.zeros((5, 1))), ad.constant(np.zeros((5, 1))))


def test_fuse_sequence_shapes_and_length():
    rng = np.random.default_rng(8)
    gate_params = fusion.FusionGateParams.init(4, rng)
    layer = lstm.BiLstmLayer.init(4, 3, rng)
    a_seq = [ad.constant(rng.normal(size=(4, 1))) for _ in range(5)]
    v_seq = [ad.constant(rng.normal(size=(4, 1))) for _ in range(5)]
    gates, fused, encoded = fusion.fuse_sequence(gate_params, layer, a_seq, v_seq)
    assert len(gates) == len(fused) == len(encoded) == 5
    assert fused[0].value.shape == (4, 1)
    assert encoded[0].value.shape == (6, 1)  # both directions


def test_fuse_sequence_single_direction_uses_forward_cell():
    rng = np.random.default_rng(9)
    gate_params = fusion.FusionGateParams.init(3, rng)
    layer = lstm.BiLstmLayer.init(3, 2, rng)
    a_seq = [ad.constant(rng.normal(size=(3, 1))) for _ in range(4)]
    v_seq = [ad.constant(rng.normal(size=(3, 1))) for _ in range(4)]
    _, fused, encoded = fusion.fuse_sequence(
        gate_params, layer, a_seq, v_seq, bidirectional=False)
    assert encoded[0].value.shape == (2, 1)
    ref = lstm.lstm_run(layer.forward_cell, fused)
    for e, r in zip(encoded, ref):
        npt.assert_array_equal(e.value, r.value)


def test_fuse_sequence_length_mismatch():
    rng = np.random.default_rng(10)
    gate_params = fusion.FusionGateParams.init(3, rng)
    layer = lstm.BiLstmLayer.init(3, 2, rng)
    a_seq = [ad.constant(rng.normal(size=(3, 1))) for _ in range(4)]
    v_seq = [ad.constant(rng.normal(size=(3, 1))) for _ in range(3)]
    with pytest.raises(ShapeError):
        fusion.fuse_sequence(gate_params, layer, a_seq, v_seq)


@pytest.mark.parametrize("elementwise", [False, True])
def test_gate_gradients_match_finite_differences(elementwise):
    rng = np.random.default_rng(77)
    params = fusion.FusionGateParams.init(3, rng, elementwise=elementwise)
    a_val = rng.normal(size=(3, 1))
    v_val = rng.normal(size=(3, 1))
    target = rng.normal(size=(3, 1))

    def f():
        _, fused = fusion.gate(params, ad.constant(a_val), ad.constant(v_val))
        diff = ad.sub(fused, ad.constant(target))
        return ad.sum_all(ad.mul(diff, diff))

    report = ad.finite_diff_check(f, dict(params.named_parameters()),
                                  rng=np.random.default_rng(1), n_coords=12)
    assert report.passed, report.group_max()


def test_fuse_sequence_gradients_reach_gate_and_layer():
    rng = np.random.default_rng(78)
    gate_params = fusion.FusionGateParams.init(2, rng)
    layer = lstm.BiLstmLayer.init(2, 2, rng)
    a_seq = [rng.normal(size=(2, 1)) for _ in range(4)]
    v_seq = [rng.normal(size=(2, 1)) for _ in range(4)]
    named = dict(gate_params.named_parameters("gate."))
    named.update(layer.named_parameters("fusion."))

    def f():
        _, _, encoded = fusion.fuse_sequence(
            gate_params, layer,
            [ad.constant(a) for a in a_seq], [ad.constant(v) for v in v_seq])
        return ad.sum_all(ad.tanh(ad.concat_cols(encoded)))

    report = ad.finite_diff_check(f, named, rng=np.random.default_rng(2), n_coords=40)
    assert report.passed, report.group_max()
