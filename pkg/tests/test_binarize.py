import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bibit import binarize as bz
from bibit import bitcore as bc
from bibit.errors import DomainError, ShapeError

finite = st.floats(-10, 10, allow_nan=False)
vectors = hnp.arrays(np.float64, st.integers(1, 40), elements=finite)


class TestSignAndBool:
    def test_zero_maps_to_plus_one(self):
        assert bz.sign_fwd(0.0) == 1.0
        assert bz.bool_fwd(0.0) == 1.0

    def test_values(self):
        assert np.array_equal(bz.sign_fwd([-2, -1e-9, 3]), [-1, -1, 1])
        assert np.array_equal(bz.bool_fwd([-2, -1e-9, 3]), [0, 0, 1])

    @given(vectors)
    def test_bool_is_affine_sign(self, x):
        assert np.array_equal(bz.bool_fwd(x), (bz.sign_fwd(x) + 1) / 2)

    def test_nan_rejected(self):
        with pytest.raises(DomainError):
            bz.sign_fwd([np.nan])

    def test_infinity_allowed(self):
        assert np.array_equal(bz.sign_fwd([-np.inf, np.inf]), [-1, 1])


class TestSte:
    def test_boundary_inclusive(self):
        x = np.array([-1.0, -1.0000001, 0.0, 1.0, 1.0000001])
        assert np.array_equal(bz.sign_bwd(x, np.ones(5)), [1, 0, 1, 1, 0])

    def test_custom_window(self):
        w = bz.SteWindow(0.5)
        assert np.array_equal(bz.ste_mask([0.5, 0.6], w), [1, 0])

    @pytest.mark.parametrize("clip", [0.0, -1.0])
    def test_bad_window(self, clip):
        with pytest.raises(DomainError):
            bz.SteWindow(clip)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bz.sign_bwd(np.ones(3), np.ones(2))

    @given(vectors, st.floats(0.1, 5))
    def test_mask_is_window_indicator(self, x, clip):
        g = bz.sign_bwd(x, np.full_like(x, 2.0), bz.SteWindow(clip))
        assert np.array_equal(g, np.where(np.abs(x) <= clip, 2.0, 0.0))


class TestWeights:
    def test_alpha_and_signs(self):
        w = np.array([[1.0, -3.0], [2.0, 4.0]])
        signs, alpha = bz.weight_signs(w)
        assert alpha == pytest.approx(2.5)
        # mean is 1.0, so the pattern is sign(w - 1)
        assert np.array_equal(signs, [[1, -1], [1, 1]])

    def test_pinned_example(self):
        signs, alpha = bz.weight_signs(np.array([1.0, -1.0, 2.0, -2.0]))
        assert np.array_equal(signs, [1, -1, 1, -1])
        assert alpha == 1.5

    def test_constant_weight(self):
        signs, alpha = bz.weight_signs(np.full((3, 3), -0.7))
        assert np.all(signs == 1)
        assert alpha == pytest.approx(0.7)

    def test_gaussian_balance(self, rng):
        signs, _ = bz.weight_signs(rng.standard_normal(20000))
        assert 0.45 <= (signs > 0).mean() <= 0.55

    @given(hnp.arrays(np.float64, (4, 5), elements=st.integers(-50, 50).map(float)), st.integers(-20, 20))
    def test_shift_invariant_bits(self, w, c):
        assert np.array_equal(bz.weight_signs(w)[0], bz.weight_signs(w + c)[0])

    def test_packed(self):
        w = np.array([[1.0, -3.0, 2.0]])
        m, alpha = bz.binarize_weight(w)
        assert m.encoding is bc.Encoding.PLUS_MINUS_ONE
        assert np.array_equal(m.unpack(), [[1, -1, 1]])
        assert alpha == pytest.approx(2.0)

    def test_vector_becomes_row(self):
        m, _ = bz.binarize_weight(np.array([1.0, 2.0]))
        assert m.shape == (1, 2)

    @given(hnp.arrays(np.float64, (6, 8), elements=finite))
    def test_scale_invariant_pattern(self, w):
        s1, a1 = bz.weight_signs(w)
        s2, a2 = bz.weight_signs(3.0 * w)
        assert np.array_equal(s1, s2) or np.allclose(w, w.mean())
        assert a2 == pytest.approx(3.0 * a1)

    def test_rejects_empty_and_inf(self):
        with pytest.raises(DomainError):
            bz.weight_signs(np.zeros((0, 3)))
        with pytest.raises(DomainError):
            bz.weight_signs(np.array([np.inf]))

    def test_row_signs(self):
        e = np.array([[1.0, 3.0], [-2.0, -2.0]])
        signs, alpha = bz.row_signs(e)
        assert np.array_equal(signs, [[-1, 1], [1, 1]])
        assert np.array_equal(alpha.ravel(), [2.0, 2.0])


class TestQuantizer:
    def test_one_bit_is_scaled_sign(self):
        spec = bz.QuantizerSpec(1, 2.0)
        assert np.array_equal(bz.quantize_q([-0.1, 0.0, 5.0], spec), [-2, 2, 2])

    def test_two_bit_grid(self):
        spec = bz.QuantizerSpec(2, 1.0)
        out = bz.quantize_q([-5.0, -0.5, 0.1, 0.4, 0.9, 1.0, 5.0], spec)
        assert np.allclose(out, [-1, -2 / 3, 0, 2 / 3, 2 / 3, 1, 1])

    @pytest.mark.parametrize("q,x,want", [(2, 0.7, 2 / 3), (3, 1.4, 1.0), (1, -0.2, -1.0), (3, -1.4, -1.0)])
    def test_pinned_values(self, q, x, want):
        assert bz.quantize_q([x], bz.QuantizerSpec(q, 1.0))[0] == pytest.approx(want)

    @given(vectors, st.integers(1, 8))
    def test_range(self, x, q):
        assert np.all(np.abs(bz.quantize_q(x, bz.QuantizerSpec(q, 1.0))) <= 1.0)

    @given(vectors, st.integers(1, 8))
    def test_odd_away_from_ties(self, x, q):
        levels = 2**q - 1
        u = levels * x / 2.0 + 0.5
        keep = (np.abs(u - np.round(u)) > 1e-9) & (x != 0)
        x = x[keep]
        spec = bz.QuantizerSpec(q, 1.0)
        assert np.allclose(bz.quantize_q(-x, spec), -bz.quantize_q(x, spec))

    @given(vectors, st.integers(2, 8))
    def test_error_bounded_inside_range(self, x, q):
        spec = bz.QuantizerSpec(q, 1.0)
        inside = np.abs(x) <= 1.0
        step = 2.0 / (2**q - 1)
        err = np.abs(bz.quantize_q(x, spec) - x)[inside]
        assert np.all(err <= step / 2 + 1e-12) or np.all(err <= step)

    @given(st.lists(finite, min_size=2, max_size=20), st.integers(1, 8))
    def test_monotone(self, xs, q):
        x = np.sort(np.array(xs))
        y = bz.quantize_q(x, bz.QuantizerSpec(q))
        assert np.all(np.diff(y) >= 0)

    @pytest.mark.parametrize("bits", [0, 9, 2.5])
    def test_bad_bits(self, bits):
        with pytest.raises(DomainError):
            bz.QuantizerSpec(bits)

    def test_bad_range(self):
        with pytest.raises(DomainError):
            bz.QuantizerSpec(2, 0.0)


class TestThresholds:
    def test_fixed_zero(self):
        out = bz.threshold_variants(np.array([[-1.0, 0.0, 2.0]]), bz.Threshold(bz.ThresholdKind.FIXED_ZERO))
        assert np.array_equal(out, [[0, 1, 1]])

    def test_mean_shift(self):
        out = bz.threshold_variants(np.array([[1.0, 2.0, 6.0]]), bz.Threshold(bz.ThresholdKind.MEAN_SHIFT))
        assert np.array_equal(out, [[0, 0, 1]])

    def test_quantile_median_balances(self, rng):
        x = rng.standard_normal((5, 101))
        out = bz.threshold_variants(x, bz.Threshold(bz.ThresholdKind.QUANTILE, 0.5))
        assert np.all(out.sum(axis=1) == 51)

    @given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=30, unique=True))
    def test_median_ones_count(self, xs):
        x = np.array([xs])
        out = bz.threshold_variants(x, bz.Threshold(bz.ThresholdKind.QUANTILE, 0.5))
        assert out.sum() == -(-len(xs) // 2)

    def test_fixed_zero_on_softmax_is_all_ones(self, rng):
        a = rng.standard_normal((4, 9))
        s = np.exp(a) / np.exp(a).sum(axis=1, keepdims=True)
        assert np.all(bz.threshold_variants(s, bz.Threshold(bz.ThresholdKind.FIXED_ZERO)) == 1)

    def test_mean_shift_symmetric_row(self):
        out = bz.threshold_variants(np.array([[-2.0, 2.0]]), bz.Threshold(bz.ThresholdKind.MEAN_SHIFT))
        assert np.array_equal(out, [[0, 1]])

    def test_asym_midpoint(self):
        out = bz.threshold_variants(np.array([[0.0, 1.0, 3.0, 4.0]]), bz.Threshold(bz.ThresholdKind.ASYM))
        assert np.array_equal(out, [[0, 0, 1, 1]])

    def test_mask_excluded_and_zeroed(self):
        x = np.array([[1.0, 2.0, 100.0]])
        mask = np.array([[True, True, False]])
        out = bz.threshold_variants(x, bz.Threshold(bz.ThresholdKind.MEAN_SHIFT), mask)
        assert np.array_equal(out, [[0, 1, 0]])

    def test_fully_masked_row_is_zero(self):
        out = bz.threshold_variants(np.ones((1, 3)), bz.Threshold(bz.ThresholdKind.MEAN_SHIFT),
                                    np.zeros((1, 3), bool))
        assert np.array_equal(out, np.zeros((1, 3)))

    @pytest.mark.parametrize("p", [None, 0.0, 1.0])
    def test_quantile_level_checked(self, p):
        with pytest.raises(DomainError):
            bz.Threshold(bz.ThresholdKind.QUANTILE, p)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            bz.row_thresholds(np.zeros((0,)), bz.Threshold(bz.ThresholdKind.MEAN_SHIFT))
