"""Worked examples and properties of the two quantizer families."""

import numpy as np
import pytest

from spikequant import diffcore as dc
from spikequant.errors import ValidationError
from spikequant.quantizers import (
    CHOICES, PowerOfTwoParams, QuantChoice, UniformParams, apply_quant,
    apply_quant_array, calibrate_pot, calibrate_uniform, grid_cardinality,
    pot_quantize, pot_quantize_array, uniform_quantize, uniform_quantize_array,
)


# ---------------------------------------------------------------------------
# choice vocabulary
# ---------------------------------------------------------------------------

def test_exactly_five_choices_with_expected_names_and_bits():
    assert [c.value for c in CHOICES] == ["fp32", "2u", "4u", "2l", "4l"]
    assert [c.bits for c in CHOICES] == [32, 2, 4, 2, 4]
    assert QuantChoice.from_name("2l") is QuantChoice.P2
    with pytest.raises(ValidationError):
        QuantChoice.from_name("3u")


# ---------------------------------------------------------------------------
# uniform calibration
# ---------------------------------------------------------------------------

def test_calibrate_uniform_symmetric_range():
    p = calibrate_uniform(np.array([-1.0, 0.2, 1.0]), bits=2)
    assert p.scale == pytest.approx(2.0 / 3.0)
    # round(1 / (2/3)) = round(1.5) = 2 under half-to-even
    assert p.zero_point == 2.0


def test_calibrate_uniform_constant_tensor():
    p = calibrate_uniform(np.full(7, 0.3), bits=4)
    assert (p.scale, p.zero_point) == (1.0, 0.0)


def test_calibrate_uniform_positive_range():
    p = calibrate_uniform(np.array([0.0, 7.5, 15.0]), bits=4)
    assert (p.scale, p.zero_point) == (1.0, 0.0)


def test_calibrate_uniform_rejects_empty():
    with pytest.raises(ValidationError):
        calibrate_uniform(np.array([]), bits=2)


# ---------------------------------------------------------------------------
# uniform quantization
# ---------------------------------------------------------------------------

def test_uniform_quantize_worked_example():
    p = UniformParams(scale=0.1, zero_point=8.0, bits=4)
    q, _ = uniform_quantize_array(np.array([0.23]), p)
    # round(2.3) = 2, +8 = 10, 0.1 * (10 - 8) = 0.2
    assert q[0] == pytest.approx(0.2)


def test_uniform_quantize_exact_grid_point():
    p = UniformParams(scale=0.1, zero_point=0.0, bits=4)
    q, _ = uniform_quantize_array(np.array([0.5]), p)
    assert q[0] == pytest.approx(0.5)


def test_uniform_quantize_clamps_below():
    p = UniformParams(scale=0.1, zero_point=8.0, bits=4)
    q, mask = uniform_quantize_array(np.array([-10.0]), p)
    assert q[0] == pytest.approx(0.1 * (0 - 8))
    assert mask[0] == 0.0


def test_uniform_ste_gradient_exact():
    p = UniformParams(scale=0.1, zero_point=8.0, bits=4)
    x = dc.tensor([0.23, -10.0, 10.0], requires_grad=True)
    with dc.Tape() as tape:
        loss = dc.reduce_sum(uniform_quantize(x, p))
    grads = tape.backward(loss)
    assert np.array_equal(grads.of(x), [1.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# power-of-two calibration
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("peak,scale", [(1.0, 1.0), (1.5, 1.0), (0.3, 0.25)])
def test_calibrate_pot_examples(peak, scale):
    p = calibrate_pot(np.array([peak / 3, -peak]), bits=3)
    assert p.scale == scale


def test_calibrate_pot_all_zero_warns():
    with pytest.warns(RuntimeWarning):
        p = calibrate_pot(np.zeros(4), bits=2)
    assert p.scale == 1.0


# ---------------------------------------------------------------------------
# power-of-two quantization
# ---------------------------------------------------------------------------

def test_pot_quantize_worked_examples():
    p = PowerOfTwoParams(scale=1.0, bits=3)  # dead zone at 2^-3 = 0.125
    q, _ = pot_quantize_array(np.array([0.3, 0.06, 1.5, -0.3]), p)
    assert q == pytest.approx([0.25, 0.0, 1.0, -0.25])


def test_pot_ste_gradient_exact():
    p = PowerOfTwoParams(scale=1.0, bits=3)
    x = dc.tensor([0.3, 0.06, 1.5, -2.0, 1.0], requires_grad=True)
    with dc.Tape() as tape:
        loss = dc.reduce_sum(pot_quantize(x, p))
    grads = tape.backward(loss)
    # pass-through for |x/s| <= 1 (dead zone included), zero when saturated
    assert np.array_equal(grads.of(x), [1.0, 1.0, 0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# apply_quant dispatch
# ---------------------------------------------------------------------------

def test_apply_quant_fp32_is_identity():
    x = dc.tensor([0.123, -9.0])
    assert apply_quant(x, QuantChoice.FP32) is x


def test_apply_quant_p2_worked_examples():
    x = np.array([0.6, 0.4, 1.0])
    q = apply_quant_array(x, QuantChoice.P2)  # scale 1, dead zone 0.5
    assert q == pytest.approx([0.5, 0.0, 1.0])


def test_apply_quant_matches_array_variant():
    rng = np.random.default_rng(0)
    x = rng.normal(size=50)
    for choice in CHOICES:
        q_t = apply_quant(dc.tensor(x), choice).data
        q_a = apply_quant_array(x, choice)
        assert np.array_equal(q_t, q_a)


# ---------------------------------------------------------------------------
# properties (small randomized sweeps; the acceptance suite runs 10^4)
# ---------------------------------------------------------------------------

def _random_tensors(n, rng):
    for _ in range(n):
        size = int(rng.integers(1, 40))
        scale = float(10.0 ** rng.uniform(-3, 2))
        yield rng.normal(size=size) * scale


def test_uniform_grid_membership_and_cardinality():
    rng = np.random.default_rng(123)
    for arr in _random_tensors(300, rng):
        for bits in (2, 4):
            p = calibrate_uniform(arr, bits)
            q, _ = uniform_quantize_array(arr, p)
            grid = p.scale * (np.arange(2 ** bits) - p.zero_point)
            for v in np.unique(q):
                assert np.min(np.abs(grid - v)) < 1e-9 * max(1.0, abs(v))
            assert len(np.unique(q)) <= 2 ** bits


def test_pot_membership_and_magnitude_count():
    rng = np.random.default_rng(321)
    for arr in _random_tensors(300, rng):
        for bits in (2, 4):
            p = calibrate_pot(arr, bits)
            q, _ = pot_quantize_array(arr, p)
            nz = q[q != 0.0] / p.scale
            if nz.size:
                exps = np.log2(np.abs(nz))
                assert np.allclose(exps, np.round(exps))
                assert np.max(np.abs(nz)) <= 1.0
            mags = np.unique(np.abs(q / p.scale))
            assert len(mags) <= 2 ** (bits - 1) + 1


def test_idempotence_with_fixed_calibration():
    rng = np.random.default_rng(99)
    for arr in _random_tensors(100, rng):
        pu = calibrate_uniform(arr, 4)
        q1, _ = uniform_quantize_array(arr, pu)
        q2, _ = uniform_quantize_array(q1, pu)
        assert np.array_equal(q1, q2)
        pp = calibrate_pot(arr, 4)
        r1, _ = pot_quantize_array(arr, pp)
        r2, _ = pot_quantize_array(r1, pp)
        assert np.array_equal(r1, r2)


def test_uniform_monotone():
    rng = np.random.default_rng(17)
    x = np.sort(rng.normal(size=200) * 3)
    p = calibrate_uniform(x, 4)
    q, _ = uniform_quantize_array(x, p)
    assert np.all(np.diff(q) >= 0)


def test_uniform_error_bound_unclamped():
    rng = np.random.default_rng(23)
    for arr in _random_tensors(200, rng):
        p = calibrate_uniform(arr, 4)
        q, mask = uniform_quantize_array(arr, p)
        inside = mask == 1.0
        assert np.all(np.abs(arr[inside] - q[inside]) <= p.scale / 2 + 1e-12)


def test_grid_cardinality_table():
    assert grid_cardinality(QuantChoice.FP32) is None
    assert grid_cardinality(QuantChoice.U2) == 4
    assert grid_cardinality(QuantChoice.U4) == 16
    assert grid_cardinality(QuantChoice.P2) == 5
    assert grid_cardinality(QuantChoice.P4) == 17
